"""Spin-weighted spherical harmonics and the eth ladder operators.

Convention: for spin weight s (integer or half-integer) and frame (e_theta, e_phi),

    eth  eta = -(d_theta + i csc(theta) d_phi - s cot(theta)) eta
    ethb eta = -(d_theta - i csc(theta) d_phi + s cot(theta)) eta

and  sY_lm = (-1)^(m-s) sqrt((2l+1)/4pi) d^l_{m,-s}(theta) exp(i m phi), so that

    eth  sY_lm =  sqrt((l-s)(l+s+1)) (s+1)Y_lm
    ethb sY_lm = -sqrt((l+s)(l-s+1)) (s-1)Y_lm.

Half-integer weights are sections in the frame trivialisation; exp(i m phi) with
half-integer m flips sign once around the axis, as spinor components must.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import binom, eval_jacobi

from .domains import ladder_levels


def wigner_d(j, mp, m, beta):
    """Wigner small-d matrix element d^j_{mp,m}(beta) and its beta-derivative."""
    k = min(j + m, j - m, j + mp, j - mp)
    if k == j + m:
        a, lam = mp - m, mp - m
    elif k == j - m:
        a, lam = m - mp, 0
    elif k == j + mp:
        a, lam = m - mp, 0
    else:
        a, lam = mp - m, mp - m
    k, a, lam = int(round(k)), int(round(a)), int(round(lam))
    b = int(round(2 * j - 2 * k - a))
    pref = (-1) ** lam * np.sqrt(binom(2 * j - k, k + a) / binom(k + b, b))
    s, c = np.sin(beta / 2), np.cos(beta / 2)
    x = np.cos(beta)
    P = eval_jacobi(k, a, b, x)
    dP = 0.5 * (k + a + b + 1) * eval_jacobi(k - 1, a + 1, b + 1, x) if k > 0 else np.zeros_like(x)
    val = pref * s**a * c**b * P
    der = pref * (
        0.5 * a * s ** (a - 1) * c ** (b + 1) * P
        - 0.5 * b * s ** (a + 1) * c ** (b - 1) * P
        - np.sin(beta) * s**a * c**b * dP
    )
    return val, der


def sylm(s, l, m, theta, phi):
    """Value and theta-derivative of sY_lm."""
    val, der = wigner_d(l, m, -s, theta)
    phase = (-1.0) ** int(round(m - s)) * np.sqrt((2 * l + 1) / (4 * np.pi))
    e = np.exp(1j * m * phi)
    return phase * val * e, phase * der * e


def labels(s, l_max):
    """(l, m) pairs of the weight-s ladder, ordered by l then m."""
    out = []
    for l in ladder_levels(s, l_max):
        for k in range(int(round(2 * l + 1))):
            out.append((l, -l + k))
    return out


def eth_factor(s, l):
    return np.sqrt(max((l - s) * (l + s + 1), 0.0))


def ethbar_factor(s, l):
    return -np.sqrt(max((l + s) * (l - s + 1), 0.0))


@lru_cache(maxsize=64)
def _basis_cached(s, l_max, theta_key, phi_key, shape):
    theta = np.frombuffer(theta_key).reshape(shape)
    phi = np.frombuffer(phi_key).reshape(shape)
    labs = labels(s, l_max)
    B = np.empty((theta.size, len(labs)), dtype=complex)
    for k, (l, m) in enumerate(labs):
        B[:, k] = sylm(s, l, m, theta.ravel(), phi.ravel())[0]
    B.setflags(write=False)
    return B


def basis_matrix(s, l_max, theta, phi):
    """Matrix evaluating weight-s ladder coefficients on the given sample points."""
    theta = np.ascontiguousarray(theta, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    return _basis_cached(float(s), int(l_max), theta.tobytes(), phi.tobytes(), theta.shape)


def apply_eth(s, l_max, coeffs):
    """eth of a weight-s coefficient vector, as coefficients on the weight-(s+1) ladder.

    Weight-(s+1) ladders may start at a higher l; coefficients of labels missing from
    the target ladder are dropped (their eth factor is zero).
    """
    src = labels(s, l_max)
    dst = {lab: k for k, lab in enumerate(labels(s + 1, l_max))}
    out = np.zeros(len(dst), dtype=complex)
    for k, (l, m) in enumerate(src):
        if (l, m) in dst:
            out[dst[(l, m)]] = eth_factor(s, l) * coeffs[k]
    return out


def apply_ethbar(s, l_max, coeffs):
    src = labels(s, l_max)
    dst = {lab: k for k, lab in enumerate(labels(s - 1, l_max))}
    out = np.zeros(len(dst), dtype=complex)
    for k, (l, m) in enumerate(src):
        if (l, m) in dst:
            out[dst[(l, m)]] = ethbar_factor(s, l) * coeffs[k]
    return out


def evaluate(s, l_max, coeffs, theta, phi):
    return (basis_matrix(s, l_max, theta, phi) @ coeffs).reshape(np.shape(theta))


def frame_derivatives(s, l_max, coeffs, theta, phi):
    """Covariant derivatives along e_theta and e_phi of a weight-s field.

    Uses nabla_1 = -(eth + ethb)/2 and nabla_2 = i (eth - ethb)/2, both exact on the
    ladder.
    """
    up = evaluate(s + 1, l_max, apply_eth(s, l_max, coeffs), theta, phi)
    down = evaluate(s - 1, l_max, apply_ethbar(s, l_max, coeffs), theta, phi)
    return -(up + down) / 2, 0.5j * (up - down)
