"""Numerical checks of Energy-Momentum tensor identities for Spin^c Dirac operators
on the round sphere, flat tori and surface patches in S^2 x R."""

__version__ = "0.1.0"
