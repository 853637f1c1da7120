"""Saturated adaptive control law, adaptive update laws and the projection operator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import BarrierBreach, DimensionMismatch

LAWS = ("blf", "classical")


@dataclass(eq=False)
class ControllerState:
    kx: np.ndarray  # m x n
    kr: np.ndarray  # m x m

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((m, n)), np.zeros((m, m)))


@dataclass(frozen=True, eq=False)
class ControllerGains:
    gamma_x: np.ndarray
    gamma_r: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    law: str = "blf"

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {LAWS}, got {self.law!r}")

    @classmethod
    def from_reference(cls, A_r, Q, gamma_x, gamma_r, law="blf"):
        """Build gains with P solved from the reference model's Lyapunov equation."""
        Q = nx.as_matrix(Q, "Q")
        return cls(
            nx.as_matrix(gamma_x, "gamma_x"),
            nx.as_matrix(gamma_r, "gamma_r"),
            Q,
            nx.solve_lyapunov(A_r, Q),
            law,
        )

    def with_law(self, law):
        return ControllerGains(self.gamma_x, self.gamma_r, self.Q, self.P, law)


@dataclass(frozen=True)
class ProjectionParams:
    bound: float
    epsilon: float = 0.1

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("projection bound must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("projection epsilon must lie in (0, 1)")


def auxiliary_control(state, x, r):
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    m, n = state.kx.shape
    if x.shape != (n,) or r.shape != (m,) or state.kr.shape != (m, m):
        raise DimensionMismatch(f"gain shapes {state.kx.shape}/{state.kr.shape} vs x{x.shape}, r{r.shape}")
    return state.kx @ x + state.kr @ r


def saturate(v, u_bar):
    """Radially scale ``v`` onto the ball of radius ``u_bar`` when it lies outside."""
    v = np.asarray(v, dtype=float)
    nv = math.sqrt(float(v @ v))
    if nv <= u_bar:
        return v.copy()
    return v * (u_bar / nv)


def _quad(P, e):
    return float(e @ P @ e)


def classical_raw_rates(gains, B, e, x, r):
    """Unprojected gradient rates -Gx B'Pe x' and -Gr B'Pe r'."""
    e = np.asarray(e, dtype=float)
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    if B.shape[0] != e.shape[0] or x.shape != e.shape or r.shape[0] != B.shape[1]:
        raise DimensionMismatch("inconsistent dimensions for the adaptive law")
    bpe = B.T @ (gains.P @ e)
    return -np.outer(gains.gamma_x @ bpe, x), -np.outer(gains.gamma_r @ bpe, r)


def barrier_gap(e, P, xi_prime):
    """``xi'^2 - e'Pe``; raises BarrierBreach when it is not safely positive."""
    xp2 = xi_prime * xi_prime
    q = _quad(P, np.asarray(e, dtype=float))
    if q >= xp2 * (1.0 - nx.TOL.barrier_guard):
        raise BarrierBreach(q, xp2)
    return xp2 - q


def blf_raw_rates(gains, B, e, x, r, xi_prime):
    gap = barrier_gap(e, gains.P, xi_prime)
    gx, gr = classical_raw_rates(gains, B, e, x, r)
    return gx / gap, gr / gap


def project(theta, raw_rate, pp):
    """Smooth projection onto the Frobenius ball of radius ``pp.bound``.

    Uses ``f(theta) = ((1+eps)|theta|^2 - bound^2) / (eps bound^2)``: zero
    at radius ``bound/sqrt(1+eps)`` and one at ``bound``. Inside the inner
    radius, or when the rate points inward, the rate passes unchanged;
    in the band the outward normal component is scaled down by ``f``.
    """
    theta = np.asarray(theta, dtype=float)
    raw_rate = np.asarray(raw_rate, dtype=float)
    b2 = pp.bound * pp.bound
    f = ((1.0 + pp.epsilon) * float(np.sum(theta * theta)) - b2) / (pp.epsilon * b2)
    if f <= 0.0:
        return raw_rate
    grad = (2.0 * (1.0 + pp.epsilon) / (pp.epsilon * b2)) * theta
    inner = float(np.sum(grad * raw_rate))
    if inner <= 0.0:
        return raw_rate
    return raw_rate - (f * inner / float(np.sum(grad * grad))) * grad


def blf_value(e, P, xi_prime):
    """Barrier Lyapunov value 0.5 log(xi'^2 / (xi'^2 - e'Pe))."""
    gap = barrier_gap(e, P, xi_prime)
    return 0.5 * math.log(xi_prime * xi_prime / gap)
