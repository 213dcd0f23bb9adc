"""Closed-form modes of a hollow rectangular guide [0, a] x [0, b] with PEC walls.

Used as the reference for tests and the convergence study.  Fields are
returned up to a constant factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TE = "TE"
TM = "TM"


@dataclass(frozen=True)
class RectMode:
    kind: str
    m: int
    n: int
    a: float
    b: float
    beta_sq: float

    @property
    def name(self):
        return f"{self.kind}{self.m}{self.n}"

    @property
    def propagating(self):
        return self.beta_sq > 0


def _check(kind, m, n):
    if kind not in (TE, TM):
        raise ValueError(f"kind must be TE or TM, got {kind!r}")
    if m < 0 or n < 0 or int(m) != m or int(n) != n:
        raise ValueError("mode indices must be nonnegative integers")
    if kind == TE and m == 0 and n == 0:
        raise ValueError("TE00 does not exist")
    if kind == TM and (m < 1 or n < 1):
        raise ValueError("TM modes need m >= 1 and n >= 1")


def cutoff_sq(m, n, a, b):
    """k_c² = (mπ/a)² + (nπ/b)²."""
    return (m * math.pi / a) ** 2 + (n * math.pi / b) ** 2


def rect_beta(kind, m, n, a, b, omega, eps=1.0, mu=1.0):
    """β² = ω²εμ - k_c²."""
    _check(kind, m, n)
    if min(a, b, omega, eps, mu) <= 0:
        raise ValueError("a, b, omega, eps and mu must be positive")
    return omega ** 2 * eps * mu - cutoff_sq(m, n, a, b)


def rect_field(kind, m, n, a, b, backend=np):
    """Field functions ``(E_t, E3)`` for one mode.

    ``E_t(x, y)`` returns the pair (E_x, E_y) and ``E3(x, y)`` the axial
    component.  TM: E3 = sin(mπx/a) sin(nπy/b) and E_t = ∇E3; TE: E3 = 0 and
    E_t = (∂_y H3, -∂_x H3) with H3 = cos(mπx/a) cos(nπy/b).  ``backend`` may
    be any module with ``sin``, ``cos`` and ``pi`` (numpy, sympy).
    """
    _check(kind, m, n)
    sin, cos, pi = backend.sin, backend.cos, backend.pi
    kx, ky = m * pi / a, n * pi / b

    if kind == TM:
        def E3(x, y):
            return sin(kx * x) * sin(ky * y)

        def Et(x, y):
            return (kx * cos(kx * x) * sin(ky * y), ky * sin(kx * x) * cos(ky * y))
    else:
        def E3(x, y):
            return 0 * x * y

        def Et(x, y):
            return (-ky * cos(kx * x) * sin(ky * y), kx * sin(kx * x) * cos(ky * y))
    return Et, E3


def rect_mode_list(a, b, omega, eps=1.0, mu=1.0, count=12):
    """The ``count`` modes with largest β², sorted descending (TE before TM on ties).

    Returns ``(modes, n_propagating)``, where ``n_propagating`` counts all
    modes with β² > 0, not only the returned ones.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    k2 = omega ** 2 * eps * mu
    # enough indices to contain the count-th cutoff and every propagating mode
    reach = max(k2, 1.0)
    while True:
        mmax = int(math.sqrt(reach) * a / math.pi) + 1
        nmax = int(math.sqrt(reach) * b / math.pi) + 1
        modes = []
        for m in range(mmax + 1):
            for n in range(nmax + 1):
                if cutoff_sq(m, n, a, b) > reach:
                    continue
                if (m, n) != (0, 0):
                    modes.append(RectMode(TE, m, n, a, b, rect_beta(TE, m, n, a, b, omega, eps, mu)))
                if m >= 1 and n >= 1:
                    modes.append(RectMode(TM, m, n, a, b, rect_beta(TM, m, n, a, b, omega, eps, mu)))
        if len(modes) >= count:
            break
        reach *= 2
    modes.sort(key=lambda r: (-r.beta_sq, r.kind != TE, r.m, r.n))
    n_prop = sum(1 for r in modes if r.beta_sq > 0)
    return modes[:count], n_prop
