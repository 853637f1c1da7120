"""Feasibility analysis for the joint state/input constraint.

The sufficient condition has the affine form ``u_bar > alpha * x_bar + beta``
with ``alpha = kx_bar - eta`` and
``beta = kr_bar * r_bar + d_bar / ||B|| + xa_bar * eta``, where
``eta = lambda_min(Q) / (2 lambda_max(P) ||B||)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .errors import MissingX0

CASE_LABELS = ("case_2_1", "case_2_2_varrho_nonneg", "case_2_2_varrho_neg")


def compute_eta(Q, P, B):
    lmin_q, _ = nx.eig_sym_extremes(Q)
    _, lmax_p = nx.eig_sym_extremes(P)
    return lmin_q / (2.0 * lmax_p * nx.spectral_norm(B))


def compute_alpha_beta(cs, eta, r_bar, B_norm):
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    alpha = cs.kx_bar - eta
    beta = cs.kr_bar * r_bar + cs.d_bar / B_norm + cs.xa_bar * eta
    return alpha, beta


def check_c1(u_bar, x_bar, alpha, beta):
    """Strict check of ``u_bar > alpha x_bar + beta``; returns (feasible, margin)."""
    margin = u_bar - (alpha * x_bar + beta)
    return margin > 0.0, margin


def min_input_bound(x_bar, alpha, beta):
    return alpha * x_bar + beta


def max_state_bound(u_bar, alpha, beta, xa_bar=0.0):
    """Supremum of admissible ``x_bar`` for a given ``u_bar``.

    Returns ``math.inf`` when no upper limit exists and ``None`` when no
    ``x_bar`` above ``xa_bar`` is admissible. For ``alpha < 0`` the
    admissible set is bounded below instead; see :func:`admissible_state_interval`.
    """
    lo_hi = admissible_state_interval(u_bar, alpha, beta, xa_bar)
    return None if lo_hi is None else lo_hi[1]


def admissible_state_interval(u_bar, alpha, beta, xa_bar=0.0):
    """Open interval ``(lo, hi)`` of ``x_bar > xa_bar`` satisfying the condition, or None."""
    if alpha > 0:
        hi = (u_bar - beta) / alpha
        return (xa_bar, hi) if hi > xa_bar else None
    if alpha == 0:
        return (xa_bar, math.inf) if u_bar > beta else None
    lo = (u_bar - beta) / alpha
    return (max(lo, xa_bar), math.inf)


def state_only_condition(cs, P, Q):
    """Condition with unlimited input authority: x_bar > xa_bar + 2 lmax(P) d_bar / lmin(Q)."""
    _, lmax_p = nx.eig_sym_extremes(P)
    lmin_q, _ = nx.eig_sym_extremes(Q)
    threshold = cs.xa_bar + 2.0 * lmax_p * cs.d_bar / lmin_q
    return cs.x_bar > threshold, threshold


def input_only_bound(cs, r_bar, B_norm):
    """Lower bound on u_bar for the classical law with no state constraint."""
    if cs.x0_bar is None:
        raise MissingX0("input-only bound needs x0_bar")
    # same summation order as beta, so the alpha = 0 reduction is exact
    return cs.kr_bar * r_bar + cs.d_bar / B_norm + cs.x0_bar * cs.kx_bar


@dataclass(frozen=True)
class FeasibilityReport:
    eta: float
    alpha: float
    beta: float
    sigma: float
    varrho: float
    c1_satisfied: bool
    c1_margin: float
    case_label: str
    min_u_bar: float
    max_x_bar: float | None
    r_bar: float
    B_norm: float
    lambda_max_P: float
    lambda_min_P: float
    xi: float
    xi_prime: float
    state_only_satisfied: bool
    state_only_threshold: float
    input_only_bound: float | None
    kx_bar: float = math.nan
    kr_bar: float = math.nan
    kx_bound_estimate: float | None = None
    kx_true_norm: float | None = None
    kr_true_norm: float | None = None

    def as_dict(self):
        return asdict(self)

    def notes(self):
        """Human-readable diagnostics about the gain bounds."""
        out = []
        if self.kx_bound_estimate is not None and self.kx_bound_estimate > self.kx_bar:
            out.append(
                f"kx_bar={self.kx_bar:.6g} is below ||B+|| ||A_r - A|| = {self.kx_bound_estimate:.6g}"
            )
        if self.kx_true_norm is not None and self.kx_true_norm > self.kx_bar:
            out.append(f"true ||K_x||_F = {self.kx_true_norm:.6g} exceeds kx_bar={self.kx_bar:.6g}")
        if self.kr_true_norm is not None and self.kr_true_norm > self.kr_bar:
            out.append(f"true ||K_r||_F = {self.kr_true_norm:.6g} exceeds kr_bar={self.kr_bar:.6g}")
        return out


def classify_case(sigma, varrho):
    if sigma > 0:
        return "case_2_1"
    return "case_2_2_varrho_nonneg" if varrho >= 0 else "case_2_2_varrho_neg"


def analyze(cs, P, Q, B, r_bar, plant=None, reference=None):
    """Full report for one configuration."""
    eta = compute_eta(Q, P, B)
    B_norm = nx.spectral_norm(B)
    alpha, beta = compute_alpha_beta(cs, eta, r_bar, B_norm)
    ok, margin = check_c1(cs.u_bar, cs.x_bar, alpha, beta)
    sigma = cs.kx_bar / eta - 1.0
    varrho = cs.u_bar - cs.kx_bar * cs.xa_bar - cs.kr_bar * r_bar - cs.d_bar / B_norm
    lmin_p, lmax_p = nx.eig_sym_extremes(P)
    so_ok, so_thr = state_only_condition(cs, P, Q)
    io = input_only_bound(cs, r_bar, B_norm) if cs.x0_bar is not None else None
    kx_est = kx_true = kr_true = None
    if plant is not None and reference is not None:
        from .models import compute_true_gains, kx_bound_estimate

        kx_est = kx_bound_estimate(plant, reference)
        tg = compute_true_gains(plant, reference)
        kx_true = nx.frobenius_norm(tg.K_x)
        kr_true = nx.frobenius_norm(tg.K_r)
    return FeasibilityReport(
        eta=eta,
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        varrho=varrho,
        c1_satisfied=ok,
        c1_margin=margin,
        case_label=classify_case(sigma, varrho),
        min_u_bar=min_input_bound(cs.x_bar, alpha, beta),
        max_x_bar=max_state_bound(cs.u_bar, alpha, beta, cs.xa_bar),
        r_bar=r_bar,
        B_norm=B_norm,
        lambda_max_P=lmax_p,
        lambda_min_P=lmin_p,
        xi=cs.xi,
        xi_prime=cs.xi * math.sqrt(lmin_p),
        state_only_satisfied=so_ok,
        state_only_threshold=so_thr,
        input_only_bound=io,
        kx_bar=cs.kx_bar,
        kr_bar=cs.kr_bar,
        kx_bound_estimate=kx_est,
        kx_true_norm=kx_true,
        kr_true_norm=kr_true,
    )


@dataclass(frozen=True, eq=False)
class RegionGrid:
    u_axis: np.ndarray
    x_axis: np.ndarray
    feasible: np.ndarray  # shape (len(u_axis), len(x_axis))
    alpha: float
    beta: float

    def rows(self):
        """(x_bar, u_bar, feasible) triples in row-major order."""
        for i, u in enumerate(self.u_axis):
            for j, x in enumerate(self.x_axis):
                yield float(x), float(u), int(self.feasible[i, j])

    def slice_u(self, u_index):
        return self.feasible[u_index, :]

    def slice_x(self, x_index):
        return self.feasible[:, x_index]


def build_region_grid(u_range, x_range, alpha, beta, resolution):
    """Classify a (u_bar, x_bar) grid by the strict affine condition.

    ``resolution`` is an int (same for both axes) or a (n_u, n_x) pair.
    """
    if isinstance(resolution, int):
        n_u = n_x = resolution
    else:
        n_u, n_x = resolution
    if n_u < 2 or n_x < 2:
        raise ValueError("resolution must be at least 2")
    if min(u_range) <= 0 or min(x_range) <= 0:
        raise ValueError("ranges must be positive")
    u_axis = np.linspace(u_range[0], u_range[1], n_u)
    x_axis = np.linspace(x_range[0], x_range[1], n_x)
    feasible = u_axis[:, None] - (alpha * x_axis[None, :] + beta) > 0.0
    return RegionGrid(u_axis, x_axis, feasible, float(alpha), float(beta))
