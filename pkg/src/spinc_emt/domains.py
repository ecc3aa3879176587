"""Discretized model spaces: flat 2- and 3-tori, the round sphere, and chart patches.

Every domain stores its samples in an orthonormal frame.  Lattice domains are
periodic grids; the sphere is a spectral domain whose sample grid (Gauss-Legendre
in cos(theta) times uniform in phi) is only used to evaluate band-limited fields.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ResolutionError(ValueError):
    pass


class GeometryError(ValueError):
    pass


class DomainKindError(TypeError):
    pass


@dataclass(frozen=True, eq=False)
class Domain:
    kind: str  # torus2 | sphere_ladder | patch2 | torus3
    shape: tuple
    spacing: tuple
    lengths: tuple
    coords: tuple  # coordinate arrays, each of `shape`
    metric: np.ndarray  # (..., n, n) coordinate metric samples
    frame: np.ndarray  # (..., n, n): frame[..., i, a] = i-th coordinate component of e_a
    curvature: np.ndarray  # Gaussian curvature K (2D) or scalar curvature / 2 (3D)
    weights: np.ndarray
    chi: int | None = None
    l_max: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 3 if self.kind == "torus3" else 2

    @property
    def npoints(self) -> int:
        return int(np.prod(self.shape))

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def scalar_curvature(self) -> np.ndarray:
        return 2.0 * self.curvature

    def integrate(self, values) -> float:
        return float(np.sum(np.asarray(values) * self.weights))


def _flat_frame(shape, n):
    eye = np.broadcast_to(np.eye(n), shape + (n, n))
    return eye.copy(), eye.copy()


def build_torus2(L1: float, L2: float, N: int) -> Domain:
    if N < 4:
        raise ResolutionError(f"torus resolution N={N} is below the minimum of 4")
    if L1 <= 0 or L2 <= 0:
        raise GeometryError("side lengths must be positive")
    h = (L1 / N, L2 / N)
    x, y = np.meshgrid(np.arange(N) * h[0], np.arange(N) * h[1], indexing="ij")
    metric, frame = _flat_frame((N, N), 2)
    return Domain(
        kind="torus2",
        shape=(N, N),
        spacing=h,
        lengths=(float(L1), float(L2)),
        coords=(x, y),
        metric=metric,
        frame=frame,
        curvature=np.zeros((N, N)),
        weights=np.full((N, N), h[0] * h[1]),
        chi=0,
    )


def build_torus3(L1: float, L2: float, L3: float, N: int) -> Domain:
    if N < 4:
        raise ResolutionError(f"torus resolution N={N} is below the minimum of 4")
    if min(L1, L2, L3) <= 0:
        raise GeometryError("side lengths must be positive")
    h = (L1 / N, L2 / N, L3 / N)
    axes = [np.arange(N) * hi for hi in h]
    coords = tuple(np.meshgrid(*axes, indexing="ij"))
    metric, frame = _flat_frame((N, N, N), 3)
    return Domain(
        kind="torus3",
        shape=(N, N, N),
        spacing=h,
        lengths=(float(L1), float(L2), float(L3)),
        coords=coords,
        metric=metric,
        frame=frame,
        curvature=np.zeros((N, N, N)),
        weights=np.full((N, N, N), h[0] * h[1] * h[2]),
    )


def sphere_grid_size(l_max: int) -> tuple[int, int]:
    """Grid able to integrate products of two fields band-limited at l_max + 2."""
    band = l_max + 2
    return band + 2, 2 * band + 4


def build_sphere_ladder(l_max: int) -> Domain:
    if l_max < 2:
        raise ResolutionError(f"sphere ladder needs l_max >= 2, got {l_max}")
    ntheta, nphi = sphere_grid_size(l_max)
    x, wx = np.polynomial.legendre.leggauss(ntheta)
    theta = np.arccos(x)
    phi = 2 * np.pi * np.arange(nphi) / nphi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    w = np.outer(wx, np.full(nphi, 2 * np.pi / nphi))
    # frame (e_theta, e_phi) in coordinates (theta, phi)
    metric = np.zeros(th.shape + (2, 2))
    metric[..., 0, 0] = 1.0
    metric[..., 1, 1] = np.sin(th) ** 2
    frame = np.zeros(th.shape + (2, 2))
    frame[..., 0, 0] = 1.0
    frame[..., 1, 1] = 1.0 / np.sin(th)
    return Domain(
        kind="sphere_ladder",
        shape=th.shape,
        spacing=(np.nan, 2 * np.pi / nphi),
        lengths=(np.pi, 2 * np.pi),
        coords=(th, ph),
        metric=metric,
        frame=frame,
        curvature=np.ones(th.shape),
        weights=w,
        chi=2,
        l_max=int(l_max),
    )


def ladder_levels(s: float, l_max: int) -> list[float]:
    """Degrees l admissible for spin weight s up to the ladder level l_max."""
    start = abs(s)
    frac = start - np.floor(start)
    top = l_max + frac
    out = []
    l = start
    while l <= top + 1e-12:
        out.append(l)
        l += 1.0
    return out


def ladder_dimension(s: float, l_max: int) -> int:
    return int(sum(round(2 * l + 1) for l in ladder_levels(s, l_max)))


# ---------------------------------------------------------------------------
# chart patches


@dataclass(frozen=True)
class ChartSpec:
    a: float
    b: float
    N: int
    M: int
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray

    def to_text(self) -> str:
        doc = {
            "a": self.a,
            "b": self.b,
            "N": self.N,
            "M": self.M,
            "g11": [repr(float(v)) for v in np.ravel(self.g11)],
            "g12": [repr(float(v)) for v in np.ravel(self.g12)],
            "g22": [repr(float(v)) for v in np.ravel(self.g22)],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "ChartSpec":
        doc = json.loads(text)
        missing = {"a", "b", "N", "M", "g11", "g12", "g22"} - set(doc)
        if missing:
            raise GeometryError(f"chart spec is missing fields {sorted(missing)}")
        N, M = int(doc["N"]), int(doc["M"])
        arrs = []
        for key in ("g11", "g12", "g22"):
            vals = np.array([float(v) for v in doc[key]], dtype=float)
            if vals.size != N * M:
                raise GeometryError(f"{key} has {vals.size} samples, expected {N * M}")
            arrs.append(vals.reshape(N, M))
        return cls(float(doc["a"]), float(doc["b"]), N, M, *arrs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ChartSpec":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _grad(f, h, axis):
    return np.gradient(f, h, axis=axis, edge_order=2)


def _second(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
    if f.shape[0] >= 4:
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h**2
    else:
        out[0], out[-1] = out[1], out[-2]
    return np.moveaxis(out, 0, axis)


def brioschi_curvature(E, F, G, hu, hv):
    """Gaussian curvature from sampled metric coefficients (Brioschi formula)."""
    Eu, Ev = _grad(E, hu, 0), _grad(E, hv, 1)
    Fu, Fv = _grad(F, hu, 0), _grad(F, hv, 1)
    Gu, Gv = _grad(G, hu, 0), _grad(G, hv, 1)
    Evv = _second(E, hv, 1)
    Guu = _second(G, hu, 0)
    Fuv = _grad(Fu, hv, 1)
    m1 = np.stack(
        [
            np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], -1),
            np.stack([Fv - 0.5 * Gu, E, F], -1),
            np.stack([0.5 * Gv, F, G], -1),
        ],
        -2,
    )
    z = np.zeros_like(E)
    m2 = np.stack(
        [
            np.stack([z, 0.5 * Ev, 0.5 * Gu], -1),
            np.stack([0.5 * Ev, E, F], -1),
            np.stack([0.5 * Gu, F, G], -1),
        ],
        -2,
    )
    return (np.linalg.det(m1) - np.linalg.det(m2)) / (E * G - F * F) ** 2


def build_patch2(chart: ChartSpec) -> Domain:
    N, M = chart.N, chart.M
    if N < 3 or M < 3:
        raise ResolutionError("patch needs at least 3 samples per axis")
    E, F, G = (np.asarray(g, dtype=float).reshape(N, M) for g in (chart.g11, chart.g12, chart.g22))
    det = E * G - F * F
    if np.any(E <= 0) or np.any(det <= 0):
        raise GeometryError("metric is not positive definite at every sample")
    hu, hv = chart.a / (N - 1), chart.b / (M - 1)
    u, v = np.meshgrid(np.linspace(0, chart.a, N), np.linspace(0, chart.b, M), indexing="ij")
    metric = np.stack([np.stack([E, F], -1), np.stack([F, G], -1)], -2)
    # Gram-Schmidt of (d_u, d_v)
    frame = np.zeros((N, M, 2, 2))
    frame[..., 0, 0] = 1 / np.sqrt(E)
    s = np.sqrt(det / E)
    frame[..., 0, 1] = -F / E / s
    frame[..., 1, 1] = 1 / s
    return Domain(
        kind="patch2",
        shape=(N, M),
        spacing=(hu, hv),
        lengths=(chart.a, chart.b),
        coords=(u, v),
        metric=metric,
        frame=frame,
        curvature=brioschi_curvature(E, F, G, hu, hv),
        weights=np.sqrt(det) * hu * hv,
        chi=None,
    )


def sphere_cap_chart(theta0: float, theta1: float, phi_span: float, N: int, M: int) -> ChartSpec:
    """Unit sphere in (colatitude - theta0, longitude) coordinates."""
    u = np.linspace(0, theta1 - theta0, N)
    th = (theta0 + u)[:, None] * np.ones((1, M))
    return ChartSpec(theta1 - theta0, phi_span, N, M, np.ones((N, M)), np.zeros((N, M)), np.sin(th) ** 2)


def flat_chart(a: float, b: float, N: int, M: int) -> ChartSpec:
    return ChartSpec(a, b, N, M, np.ones((N, M)), np.zeros((N, M)), np.ones((N, M)))


def cylinder_chart(theta0: float, phi_span: float, height: float, N: int, M: int) -> ChartSpec:
    """Vertical cylinder over the latitude circle theta = theta0 in S^2 x R, coordinates (phi, t)."""
    return ChartSpec(
        phi_span, height, N, M, np.full((N, M), np.sin(theta0) ** 2), np.zeros((N, M)), np.ones((N, M))
    )


def gauss_bonnet_check(d: Domain) -> float:
    if d.kind not in ("torus2", "sphere_ladder"):
        raise DomainKindError(f"Gauss-Bonnet needs a closed surface, got {d.kind}")
    return abs(d.integrate(d.curvature) - 2 * np.pi * d.chi)


def latlong_sphere_gauss_bonnet(N: int) -> float:
    """Gauss-Bonnet residual for the unit sphere on an N x 2N cell-centred lat-long grid.

    The analytic curvature K = 1 is integrated with second-order (midpoint) cell
    weights computed on a grid that is refined once and Richardson-combined.
    """

    def midpoint(n):
        h = np.pi / n
        theta = (np.arange(n) + 0.5) * h
        w = np.sin(theta)[:, None] * h * np.full((1, 2 * n), np.pi / n)
        return float(np.sum(np.ones_like(w) * w))

    total = (4 * midpoint(2 * N) - midpoint(N)) / 3
    return abs(total - 4 * np.pi)
