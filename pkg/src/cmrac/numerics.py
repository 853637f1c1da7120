"""Small dense linear algebra and the fixed-step RK4 kernel.

Everything here works on plain ``numpy`` arrays and is sized for the
handful-of-states systems this package simulates (n <= ~10).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NonFiniteDerivative,
    NotHurwitz,
    NotSymmetric,
    RankDeficient,
    SingularSystem,
)


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used across the package (tests import these)."""

    lyap_residual: float = 1e-9      # relative to 1 + ||Q||_F
    symmetry: float = 1e-9
    p_symmetry: float = 1e-12
    hurwitz_margin: float = -1e-12   # every Re(lambda) must be below this
    jacobi_tol: float = 1e-12
    jacobi_max_sweeps: int = 100
    rank_ratio: float = 1e-10        # sigma_min / sigma_max
    projection_slack: float = 1e-6
    barrier_guard: float = 1e-9
    matching_warn: float = 1e-6


TOL = Tolerances()


def as_matrix(m, name="matrix"):
    a = np.array(m, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def as_vector(v, name="vector"):
    a = np.array(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _jacobi_eigenvalues(S):
    """Cyclic Jacobi sweep on a symmetric matrix; returns the diagonal."""
    a = S.copy()
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(TOL.jacobi_max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off <= TOL.jacobi_tol * scale * 1e-3:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p, q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
    return a.diagonal().copy()


def eig_sym_extremes(M):
    """Smallest and largest eigenvalue of a symmetric matrix.

    The input is symmetrized before the Jacobi iteration; an asymmetry larger
    than ``TOL.symmetry`` (relative to the entry scale) raises NotSymmetric.
    """
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > TOL.symmetry * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    lam = _jacobi_eigenvalues(0.5 * (M + M.T))
    return float(lam.min()), float(lam.max())


def spectral_norm(M):
    """Largest singular value, from the top eigenvalue of the smaller Gram matrix."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0.0
    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    _, lmax = eig_sym_extremes(G)
    return math.sqrt(max(lmax, 0.0))


def frobenius_norm(M):
    return math.sqrt(float(np.sum(np.asarray(M, dtype=float) ** 2)))


def eigenvalues(M):
    # LAPACK geev: Hessenberg reduction followed by shifted QR.
    return np.linalg.eigvals(as_matrix(M, "M"))


def is_hurwitz(M):
    return bool(np.all(eigenvalues(M).real < TOL.hurwitz_margin))


def left_pseudo_inverse(B):
    """(B'B)^-1 B' for a full-column-rank B."""
    B = as_matrix(B, "B")
    n, m = B.shape
    if m > n:
        raise RankDeficient(f"B is {n}x{m}; needs at least as many rows as columns")
    G = B.T @ B
    lmin, lmax = eig_sym_extremes(G)
    if lmax <= 0.0 or lmin <= (TOL.rank_ratio ** 2) * lmax:
        raise RankDeficient("B does not have full column rank")
    return np.linalg.solve(G, B.T)


def solve_lyapunov(A_r, Q):
    """Solve ``A_r' P + P A_r + Q = 0`` by Kronecker vectorization.

    With column-major ``vec``, the equation reads
    ``(I kron A_r' + A_r' kron I) vec(P) = -vec(Q)``.
    """
    A_r = as_matrix(A_r, "A_r")
    Q = as_matrix(Q, "Q")
    n = A_r.shape[0]
    if A_r.shape != (n, n) or Q.shape != (n, n):
        raise DimensionMismatch(f"A_r {A_r.shape} and Q {Q.shape} must both be {n}x{n}")
    eig = eigenvalues(A_r)
    if np.any(eig.real >= TOL.hurwitz_margin):
        raise NotHurwitz(f"A_r is not Hurwitz (max Re(lambda) = {eig.real.max():.3g})")
    I = np.eye(n)
    K = np.kron(I, A_r.T) + np.kron(A_r.T, I)
    if np.linalg.matrix_rank(K) < n * n:
        raise SingularSystem("Kronecker system is rank-deficient")
    vec_p = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    P = vec_p.reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def lyapunov_residual(A_r, P, Q):
    return frobenius_norm(A_r.T @ P + P @ A_r + Q)


def rk4_step(f, t, y, h):
    """One classical RK4 step of ``y' = f(t, y)``."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    k1 = f(t, y)
    if not np.isfinite(k1.sum()):
        raise NonFiniteDerivative(1, t)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    if not np.isfinite(k2.sum()):
        raise NonFiniteDerivative(2, t + 0.5 * h)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    if not np.isfinite(k3.sum()):
        raise NonFiniteDerivative(3, t + 0.5 * h)
    k4 = f(t + h, y + h * k3)
    if not np.isfinite(k4.sum()):
        raise NonFiniteDerivative(4, t + h)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
