"""Entire functions phi_k of exponential integrators and closed-form rotation operators.

phi_0(z) = exp(z), phi_{k+1}(z) = (phi_k(z) - 1/k!) / z, phi_k(0) = 1/k!.

Two rotation families are provided in closed form: the 2x2 planar pair
(phi0, s*phi1 of s*J with J = [[0,1],[-1,0]]) and the 3x3 axis-angle
rotation exp(s*N) with N v = v x n for a unit axis n.  Both are exactly
2*pi-periodic in the angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_PHI_ORDER = 8

# Below this |z| the direct recurrence from exp(z) amplifies rounding by
# 1/|z| per order; the truncated Taylor series is exact to working
# precision there, and above it the recurrence is contractive.
TAYLOR_RADIUS = 1.0

_TAYLOR_TERMS = 24


def phi_scalar(k: int, z: complex) -> complex:
    """Evaluate phi_k at a scalar complex argument.

    Taylor series for |z| < TAYLOR_RADIUS, otherwise the recurrence
    phi_{j+1} = (phi_j - 1/j!)/z seeded with phi_0 = exp(z), which damps
    rounding errors for |z| >= 1.  Total on k in [0, MAX_PHI_ORDER].
    """
    if not 0 <= k <= MAX_PHI_ORDER:
        raise ValueError(f"phi order must be in [0, {MAX_PHI_ORDER}], got {k}")
    z = complex(z)
    if abs(z) < TAYLOR_RADIUS:
        return _phi_taylor(k, z)
    p = np.exp(z)
    for j in range(k):
        p = (p - 1.0 / math.factorial(j)) / z
    return complex(p)


def _phi_taylor(k: int, z: complex) -> complex:
    # phi_k(z) = sum_m z^m / (m+k)!; truncation below 1e-17/k! for |z| < 1.
    acc = 0.0 + 0.0j
    term = 1.0 / math.factorial(k)
    for m in range(_TAYLOR_TERMS):
        acc += term
        term = term * z / (m + k + 1)
        if abs(term) <= 1e-20 * max(abs(acc), 1e-300):
            break
    return acc


def phi_values(k: int, z: np.ndarray) -> np.ndarray:
    """phi_k on an array of complex arguments (element-wise)."""
    flat = np.asarray(z, dtype=complex).ravel()
    out = np.array([phi_scalar(k, w) for w in flat])
    return out.reshape(np.shape(z))


@dataclass(frozen=True)
class Rot2:
    """Planar rotation pair at angle s: phi0 = phi_0(sJ), sphi1 = s*phi_1(sJ)."""

    angle: float
    phi0: np.ndarray
    sphi1: np.ndarray


def rot2(s: float) -> Rot2:
    """Closed-form phi_0(sJ) and s*phi_1(sJ) for J = [[0,1],[-1,0]]."""
    c, sn = math.cos(s), math.sin(s)
    phi0 = np.array([[c, sn], [-sn, c]])
    sphi1 = np.array([[sn, 1.0 - c], [c - 1.0, sn]])
    return Rot2(angle=s, phi0=phi0, sphi1=sphi1)


@dataclass(frozen=True)
class Rot3:
    """Rotation exp(s*N) with N v = v x n about the unit axis n."""

    axis: np.ndarray
    angle: float
    matrix: np.ndarray


def cross_matrix(n: np.ndarray) -> np.ndarray:
    """Skew matrix N with N v = v x n."""
    n1, n2, n3 = np.asarray(n, dtype=float)
    return np.array([[0.0, n3, -n2], [-n3, 0.0, n1], [n2, -n1, 0.0]])


def rot3(n: np.ndarray, s: float) -> Rot3:
    """exp(s*N) via the Rodrigues form cos(s) I + sin(s) N + (1-cos(s)) n n^T.

    For n = e_z the upper-left 2x2 block equals rot2(s).phi0, matching the
    planar convention.
    """
    n = np.asarray(n, dtype=float)
    if n.shape != (3,):
        raise ValueError("axis must be a 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError(f"axis must be unit length, got |n| = {np.linalg.norm(n)!r}")
    c, sn = math.cos(s), math.sin(s)
    mat = c * np.eye(3) + sn * cross_matrix(n) + (1.0 - c) * np.outer(n, n)
    return Rot3(axis=n, angle=s, matrix=mat)
