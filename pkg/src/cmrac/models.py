"""Plant and reference models, the constraint record and the matching gains."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionMismatch, NotHurwitz

AUX_VARIANTS = ("self_consistent", "outer_threshold")


@dataclass(frozen=True, eq=False)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    check: bool = True

    def __post_init__(self):
        A = nx.as_matrix(self.A, "A")
        B = nx.as_matrix(self.B, "B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A is {n}x{n}")
        if B.shape[1] > n:
            raise DimensionMismatch("plant needs n >= m")
        if self.check:
            nx.left_pseudo_inverse(B)  # raises RankDeficient
            if not is_stabilizable(A, B):
                raise ValueError("(A, B) is not stabilizable")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    A_r: np.ndarray
    B_r: np.ndarray

    def __post_init__(self):
        A_r = nx.as_matrix(self.A_r, "A_r")
        B_r = nx.as_matrix(self.B_r, "B_r")
        object.__setattr__(self, "A_r", A_r)
        object.__setattr__(self, "B_r", B_r)
        n = A_r.shape[0]
        if A_r.shape != (n, n) or B_r.shape[0] != n:
            raise DimensionMismatch(f"A_r {A_r.shape} / B_r {B_r.shape} inconsistent")
        if not nx.is_hurwitz(A_r):
            raise NotHurwitz("reference model A_r is not Hurwitz")

    @property
    def n(self):
        return self.A_r.shape[0]

    @property
    def m(self):
        return self.B_r.shape[1]


def is_stabilizable(A, B, tol=1e-9):
    """PBH test on every eigenvalue with non-negative real part."""
    n = A.shape[0]
    for lam in nx.eigenvalues(A):
        if lam.real < 0:
            continue
        M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        if np.linalg.matrix_rank(M, tol=tol * max(1.0, np.abs(M).max())) < n:
            return False
    return True


@dataclass(frozen=True)
class ConstraintSpec:
    """User bounds. ``xi`` = x_bar - xa_bar is the admissible tracking-error radius."""

    x_bar: float
    u_bar: float
    xa_bar: float
    d_bar: float
    kx_bar: float
    kr_bar: float
    x0_bar: float | None = None
    xr_bar: float | None = None

    def __post_init__(self):
        for name in ("x_bar", "u_bar", "xa_bar", "kx_bar", "kr_bar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.d_bar >= 0:
            raise ValueError(f"d_bar must be non-negative, got {self.d_bar}")
        for name in ("x0_bar", "xr_bar"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive when given, got {val}")
        if not self.xa_bar < self.x_bar:
            raise ValueError(f"xa_bar ({self.xa_bar}) must be below x_bar ({self.x_bar})")

    @property
    def xi(self):
        return self.x_bar - self.xa_bar

    def xi_prime(self, P):
        lmin, _ = nx.eig_sym_extremes(P)
        return self.xi * math.sqrt(lmin)

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update(changes)
        return ConstraintSpec(**d)


@dataclass(frozen=True, eq=False)
class TrueGains:
    K_x: np.ndarray
    K_r: np.ndarray
    residual_x: float
    residual_r: float

    @property
    def matched(self):
        return max(self.residual_x, self.residual_r) < nx.TOL.matching_warn


def plant_derivative(p, x, u, d):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != (p.n,) or u.shape != (p.m,) or d.shape != (p.n,):
        raise DimensionMismatch(
            f"plant expects x[{p.n}], u[{p.m}], d[{p.n}]; got {x.shape}, {u.shape}, {d.shape}"
        )
    return p.A @ x + p.B @ u + d


def reference_derivative(rm, x_r, r):
    x_r = np.asarray(x_r, dtype=float)
    r = np.asarray(r, dtype=float)
    if x_r.shape != (rm.n,) or r.shape != (rm.m,):
        raise DimensionMismatch(f"reference expects x_r[{rm.n}], r[{rm.m}]")
    return rm.A_r @ x_r + rm.B_r @ r


def auxiliary_reference(x_r, cs, variant="self_consistent"):
    """Clip the reference state onto the ball of radius ``cs.xa_bar``.

    ``outer_threshold`` switches at ||x_r|| = x_bar, so on the band
    xa_bar <= ||x_r|| < x_bar the output is x_r itself and exceeds xa_bar.
    ``self_consistent`` switches at xa_bar and is continuous.
    """
    x_r = np.asarray(x_r, dtype=float)
    if variant == "self_consistent":
        threshold = cs.xa_bar
    elif variant == "outer_threshold":
        threshold = cs.x_bar
    else:
        raise ValueError(f"unknown auxiliary-reference variant {variant!r}")
    nr = math.sqrt(float(x_r @ x_r))
    if nr < threshold:
        return x_r.copy()
    return x_r * (cs.xa_bar / nr)


def compute_true_gains(p, rm):
    Bp = nx.left_pseudo_inverse(p.B)
    K_x = Bp @ (rm.A_r - p.A)
    K_r = Bp @ rm.B_r
    res_x = nx.frobenius_norm(p.A + p.B @ K_x - rm.A_r)
    res_r = nx.frobenius_norm(p.B @ K_r - rm.B_r)
    if max(res_x, res_r) >= nx.TOL.matching_warn:
        warnings.warn(
            f"matching conditions violated (residuals {res_x:.3g}, {res_r:.3g})", stacklevel=2
        )
    return TrueGains(K_x, K_r, res_x, res_r)


def kx_bound_estimate(p, rm, A_bound=None):
    """||B^+|| * ||A_r - A||, the smallest admissible K_x bound implied by matching.

    ``A_bound`` replaces the plant's A (e.g. a worst-case estimate) when given.
    """
    A = p.A if A_bound is None else nx.as_matrix(A_bound, "A_bound")
    return nx.spectral_norm(nx.left_pseudo_inverse(p.B)) * nx.spectral_norm(rm.A_r - A)
