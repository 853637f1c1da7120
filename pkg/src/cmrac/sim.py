"""Fixed-step closed-loop simulation with constraint monitors.

The integrated state is packed as ``[x, x_r, vec(Kx_hat), vec(Kr_hat)]``
where ``vec`` stacks columns (Fortran order). The auxiliary reference
``x_a`` is an algebraic function of ``x_r`` and is never integrated.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .controller import ControllerGains, ProjectionParams
from .errors import (
    BarrierAbort,
    BarrierBreach,
    DimensionMismatch,
    EmptyTrajectory,
    InfeasibleConfig,
    NonFiniteDerivative,
    NonFiniteState,
)
from .models import AUX_VARIANTS, ConstraintSpec, PlantModel, ReferenceModel
from .signals import DisturbanceSpec, SignalSpec, sup_norm_bound

MAX_HALVINGS = 10
INPUT_SLACK = 1e-12


def pack_state(x, x_r, kx, kr):
    kx = np.asarray(kx, dtype=float)
    kr = np.asarray(kr, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    x_r = np.asarray(x_r, dtype=float).reshape(-1)
    n = x.shape[0]
    m = kr.shape[0]
    if x_r.shape != (n,) or kx.shape != (m, n) or kr.shape != (m, m):
        raise DimensionMismatch(
            f"cannot pack x{x.shape}, x_r{x_r.shape}, Kx{kx.shape}, Kr{kr.shape}"
        )
    return np.concatenate([x, x_r, kx.reshape(-1, order="F"), kr.reshape(-1, order="F")])


def unpack_state(y, n, m):
    y = np.asarray(y, dtype=float)
    if y.shape != (2 * n + m * n + m * m,):
        raise DimensionMismatch(f"packed state has length {y.shape}, expected {2 * n + m * n + m * m}")
    i = 2 * n + m * n
    return (
        y[:n].copy(),
        y[n : 2 * n].copy(),
        y[2 * n : i].reshape((m, n), order="F"),
        y[i:].reshape((m, m), order="F"),
    )


@dataclass(eq=False)
class SimConfig:
    plant: PlantModel
    reference: ReferenceModel
    constraints: ConstraintSpec
    gains: ControllerGains
    reference_signal: SignalSpec
    disturbance: DisturbanceSpec
    x0: np.ndarray
    xr0: np.ndarray
    t_end: float
    dt: float
    khat_x0: np.ndarray | None = None
    khat_r0: np.ndarray | None = None
    aux_variant: str = "self_consistent"
    projection_epsilon: float = 0.1
    log_stride: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.plant.n, self.plant.m
        if self.reference.n != n or self.reference.m != m:
            raise DimensionMismatch("plant and reference model dimensions differ")
        self.x0 = nx.as_vector(self.x0, "x0")
        self.xr0 = nx.as_vector(self.xr0, "xr0")
        if self.x0.shape != (n,) or self.xr0.shape != (n,):
            raise DimensionMismatch(f"x0 and xr0 must have {n} entries")
        self.khat_x0 = np.zeros((m, n)) if self.khat_x0 is None else nx.as_matrix(self.khat_x0, "khat_x0")
        self.khat_r0 = np.zeros((m, m)) if self.khat_r0 is None else nx.as_matrix(self.khat_r0, "khat_r0")
        if self.khat_x0.shape != (m, n) or self.khat_r0.shape != (m, m):
            raise DimensionMismatch("initial gain estimates have wrong shape")
        if self.reference_signal.dim != m:
            raise DimensionMismatch(f"reference signal has {self.reference_signal.dim} channels, m={m}")
        if self.disturbance.dim not in (0, n):
            raise DimensionMismatch(f"disturbance has {self.disturbance.dim} channels, n={n}")
        if self.aux_variant not in AUX_VARIANTS:
            raise ValueError(f"aux_variant must be one of {AUX_VARIANTS}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if int(self.log_stride) < 1:
            raise ValueError("log_stride must be >= 1")
        self.log_stride = int(self.log_stride)
        if self.gains.Q.shape != (n, n) or self.gains.P.shape != (n, n):
            raise DimensionMismatch("Q and P must be n x n")
        if self.gains.gamma_x.shape != (m, m) or self.gains.gamma_r.shape != (m, m):
            raise DimensionMismatch("adaptation gains must be m x m")
        ProjectionParams(self.constraints.kx_bar, self.projection_epsilon)

    @property
    def controller_law(self):
        return self.gains.law

    @property
    def n(self):
        return self.plant.n

    @property
    def m(self):
        return self.plant.m

    @property
    def xi_prime(self):
        return self.constraints.xi_prime(self.gains.P)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def initial_error_energy(self):
        """e(0)'P e(0) with e measured against the auxiliary reference."""
        from .models import auxiliary_reference

        e0 = self.x0 - auxiliary_reference(self.xr0, self.constraints, self.aux_variant)
        return float(e0 @ self.gains.P @ e0)

    def r_bar(self, samples=None):
        if samples is None:
            samples = max(2, min(20001, int(round(self.t_end / self.dt)) + 1))
        return sup_norm_bound(self.reference_signal, self.t_end, samples)


class ClosedLoop:
    """Right-hand side of the closed loop for one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        p, rm, cs, g = cfg.plant, cfg.reference, cfg.constraints, cfg.gains
        n, m = p.n, p.m
        self.n, self.m = n, m
        self.A, self.B = p.A, p.B
        self.A_r, self.B_r = rm.A_r, rm.B_r
        self.P = g.P
        self.gx_btp = g.gamma_x @ p.B.T @ g.P
        self.gr_btp = g.gamma_r @ p.B.T @ g.P
        self.e_stack = np.vstack([g.P, self.gx_btp, self.gr_btp])
        # d/dt [x; x_r] = lin @ [x; x_r; u; r]
        self.lin = np.block(
            [
                [p.A, np.zeros((n, n)), p.B, np.zeros((n, m))],
                [np.zeros((n, n)), rm.A_r, np.zeros((n, m)), rm.B_r],
            ]
        )
        self.blf = g.law == "blf"
        self.xp2 = cfg.xi_prime ** 2
        self.guard = self.xp2 * (1.0 - nx.TOL.barrier_guard)
        self.u_bar = cs.u_bar
        self.xa_bar = cs.xa_bar
        self.aux_threshold = cs.xa_bar if cfg.aux_variant == "self_consistent" else cs.x_bar
        eps = cfg.projection_epsilon
        self.proj = [(b * b, eps) for b in (cs.kx_bar, cs.kr_bar)]
        self.bounds = (cs.kx_bar, cs.kr_bar)
        self.ref = cfg.reference_signal
        self.dist = cfg.disturbance
        self.has_dist = cfg.disturbance.dim > 0
        self.i_kx = 2 * n
        self.i_kr = 2 * n + m * n
        self.size = self.i_kr + m * m
        self._table = None

    def tabulate(self, h, n_steps):
        """Pre-sample r and d on the half-step grid used by fixed-step RK4."""
        ts = np.arange(2 * n_steps + 1) * (0.5 * h)
        R = self.ref.sample(ts)
        D = self.dist.sample(ts) if self.has_dist else None
        self._table = (2.0 / h, R, D, len(ts))

    def signal_values(self, t):
        """(r(t), d(t)); d is None when the configuration has no disturbance."""
        if self._table is not None:
            inv, R, D, size = self._table
            z = t * inv
            k = int(round(z))
            if 0 <= k < size and abs(z - k) < 1e-7:
                return R[k], (None if D is None else D[k])
        return self.ref(t), (self.dist(t) if self.has_dist else None)

    def disturbance(self, t):
        d = self.signal_values(t)[1]
        return np.zeros(self.n) if d is None else d

    def _signals(self, t, y):
        n, m = self.n, self.m
        x = y[:n]
        xr = y[n : 2 * n]
        kx = y[self.i_kx : self.i_kr].reshape((m, n), order="F")
        kr = y[self.i_kr :].reshape((m, m), order="F")
        r = self.signal_values(t)[0]
        nr = math.sqrt(float(xr @ xr))
        xa = xr if nr < self.aux_threshold else xr * (self.xa_bar / nr)
        e = x - xa
        v = kx @ x + kr @ r
        nv = math.sqrt(float(v @ v))
        u = v if nv <= self.u_bar else v * (self.u_bar / nv)
        return x, xr, xa, e, r, v, nv, u

    @staticmethod
    def _project(theta, rate, b2, eps):
        tt = theta @ theta
        f = ((1.0 + eps) * tt - b2) / (eps * b2)
        if f <= 0.0:
            return rate
        inner = theta @ rate
        if inner <= 0.0:
            return rate
        # grad f is parallel to theta, so the correction is along theta
        return rate - (f * inner / tt) * theta

    def derivative(self, t, y):
        n, m = self.n, self.m
        x = y[:n]
        xr = y[n : 2 * n]
        kxv = y[self.i_kx : self.i_kr]
        krv = y[self.i_kr :]
        r, d = self.signal_values(t)
        nr = math.sqrt(xr @ xr)
        e = x - xr if nr < self.aux_threshold else x - xr * (self.xa_bar / nr)
        # column-major vec reshaped row-major gives the transposed gain blocks
        v = x @ kxv.reshape(n, m) + r @ krv.reshape(m, m)
        nv = math.sqrt(v @ v)
        if nv > self.u_bar:
            v = v * (self.u_bar / nv)
        w = self.e_stack @ e  # [P e; Gx B'P e; Gr B'P e]
        if self.blf:
            q = e @ w[:n]
            if q >= self.guard:
                raise BarrierBreach(float(q), self.xp2)
            s = -1.0 / (self.xp2 - q)
        else:
            s = -1.0
        out = np.empty(self.size)
        out[: 2 * n] = self.lin @ np.concatenate((x, xr, v, r))
        if d is not None:
            out[:n] += d
        (bx, ex), (br, er) = self.proj
        out[self.i_kx : self.i_kr] = self._project(kxv, np.multiply.outer(x, s * w[n : n + m]).ravel(), bx, ex)
        out[self.i_kr :] = self._project(krv, np.multiply.outer(r, s * w[n + m :]).ravel(), br, er)
        return out

    def __call__(self, t, y):
        return self.derivative(t, y)

    def monitor(self, t, y):
        """Scalar monitors (||x||, ||u||, ||v||, ||e||, e'Pe) without building a record."""
        x, _, _, e, _, _, nv, u = self._signals(t, y)
        return (
            math.sqrt(float(x @ x)),
            math.sqrt(float(u @ u)),
            nv,
            math.sqrt(float(e @ e)),
            float(e @ self.P @ e),
        )

    def record(self, t, y, clamp):
        x, xr, xa, e, r, v, nv, u = self._signals(t, y)
        d = self.disturbance(t)
        q = float(e @ self.P @ e)
        if self.blf and q < self.xp2:
            v1 = 0.5 * math.log(self.xp2 / (self.xp2 - q))
        else:
            v1 = math.nan
        return Record(
            t=t,
            x=x.copy(),
            xr=xr.copy(),
            xa=np.array(xa, copy=True),
            u=np.array(u, copy=True),
            v_norm=nv,
            delta_u_norm=float(np.linalg.norm(u - v)),
            d=np.array(d, copy=True),
            e_norm=math.sqrt(float(e @ e)),
            eTPe=q,
            blf_v1=v1,
            khatx_fro=math.sqrt(float(y[self.i_kx : self.i_kr] @ y[self.i_kx : self.i_kr])),
            khatr_fro=math.sqrt(float(y[self.i_kr :] @ y[self.i_kr :])),
            clamp=bool(clamp),
        )

    def clamp(self, y):
        """Radially pull gain blocks back onto their bound; True if anything moved."""
        moved = False
        for (lo, hi), bound in zip(((self.i_kx, self.i_kr), (self.i_kr, self.size)), self.bounds):
            blk = y[lo:hi]
            nb = math.sqrt(float(blk @ blk))
            if nb > bound:
                y[lo:hi] = blk * (bound / nb)
                moved = True
        return moved


def closed_loop_derivative(cfg, t, packed):
    return ClosedLoop(cfg).derivative(t, np.asarray(packed, dtype=float))


class Record(NamedTuple):
    t: float
    x: np.ndarray
    xr: np.ndarray
    xa: np.ndarray
    u: np.ndarray
    v_norm: float
    delta_u_norm: float
    d: np.ndarray
    e_norm: float
    eTPe: float
    blf_v1: float
    khatx_fro: float
    khatr_fro: float
    clamp: bool


def trajectory_columns(n, m):
    cols = ["t"]
    cols += [f"x_{i + 1}" for i in range(n)]
    cols += [f"xr_{i + 1}" for i in range(n)]
    cols += [f"xa_{i + 1}" for i in range(n)]
    cols += [f"u_{i + 1}" for i in range(m)]
    cols += ["v_norm", "delta_u_norm"]
    cols += [f"d_{i + 1}" for i in range(n)]
    cols += ["e_norm", "eTPe", "blf_v1", "khatx_fro", "khatr_fro", "clamp"]
    return cols


@dataclass(eq=False)
class Trajectory:
    """Logged records as a 2-D array with a fixed column layout."""

    n: int
    m: int
    data: np.ndarray
    aborted: bool = False
    abort_reason: str = ""

    @classmethod
    def from_records(cls, records, n, m, aborted=False, abort_reason=""):
        rows = [
            np.concatenate(
                [
                    [r.t],
                    r.x,
                    r.xr,
                    r.xa,
                    r.u,
                    [r.v_norm, r.delta_u_norm],
                    r.d,
                    [r.e_norm, r.eTPe, r.blf_v1, r.khatx_fro, r.khatr_fro, float(r.clamp)],
                ]
            )
            for r in records
        ]
        data = np.array(rows) if rows else np.empty((0, len(trajectory_columns(n, m))))
        return cls(n, m, data, aborted, abort_reason)

    @property
    def columns(self):
        return trajectory_columns(self.n, self.m)

    def __len__(self):
        return self.data.shape[0]

    def column(self, name):
        return self.data[:, self.columns.index(name)]

    def block(self, prefix, width):
        i = self.columns.index(f"{prefix}_1")
        return self.data[:, i : i + width]

    @property
    def t(self):
        return self.data[:, 0]

    @property
    def x(self):
        return self.block("x", self.n)

    @property
    def xr(self):
        return self.block("xr", self.n)

    @property
    def xa(self):
        return self.block("xa", self.n)

    @property
    def u(self):
        return self.block("u", self.m)

    @property
    def d(self):
        return self.block("d", self.n)


@dataclass
class SummaryMetrics:
    max_x_norm: float
    max_u_norm: float
    max_e_norm: float
    max_eTPe_over_xiprime2: float
    state_constraint_ok: bool
    input_constraint_ok: bool
    omega_e_ok: bool
    final_e_norm: float
    saturation_fraction: float
    clamp_count: int
    steps: int = 0
    t_final: float = 0.0
    halvings: int = 0
    aborted: bool = False

    def as_dict(self):
        return dataclasses.asdict(self)


def _summarize(mon, t_final, cs, xp2, halvings=0, aborted=False):
    """Metrics from per-step monitor rows (|x|, |u|, |v|, |e|, e'Pe, clamp)."""
    mx, mu, _, me, mq = (float(mon[:, i].max()) for i in range(5))
    return SummaryMetrics(
        max_x_norm=mx,
        max_u_norm=mu,
        max_e_norm=me,
        max_eTPe_over_xiprime2=mq / xp2 if xp2 > 0 else math.inf,
        state_constraint_ok=mx < cs.x_bar,
        input_constraint_ok=mu <= cs.u_bar + INPUT_SLACK,
        omega_e_ok=mq < xp2,
        final_e_norm=float(mon[-1, 3]),
        saturation_fraction=float(np.mean(mon[:, 2] > cs.u_bar)),
        clamp_count=int(np.sum(mon[:, 5] > 0.5)),
        steps=mon.shape[0] - 1,
        t_final=float(t_final),
        halvings=halvings,
        aborted=aborted,
    )


def compute_metrics(traj, cs, P):
    """Summary metrics over the logged records of a trajectory."""
    if len(traj) == 0:
        raise EmptyTrajectory("trajectory has no records")
    lmin, _ = nx.eig_sym_extremes(P)
    mon = np.column_stack(
        [
            np.linalg.norm(traj.x, axis=1),
            np.linalg.norm(traj.u, axis=1),
            traj.column("v_norm"),
            traj.column("e_norm"),
            traj.column("eTPe"),
            traj.column("clamp"),
        ]
    )
    return _summarize(mon, traj.t[-1], cs, (cs.xi * math.sqrt(lmin)) ** 2, aborted=traj.aborted)


class SimResult(NamedTuple):
    trajectory: Trajectory
    metrics: SummaryMetrics


def feasibility_report(cfg, r_bar=None):
    from .feasibility import analyze

    if r_bar is None:
        r_bar = cfg.r_bar()
    return analyze(cfg.constraints, cfg.gains.P, cfg.gains.Q, cfg.plant.B, r_bar, cfg.plant, cfg.reference)


def _kernel_module():
    try:
        from . import _kernel
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return None
    return _kernel


def run_scenario(cfg, override_feasibility=False, gate=True, engine="auto"):
    """Integrate ``cfg`` with fixed-step RK4 and return trajectory plus metrics.

    A BLF run is refused (InfeasibleConfig) when the feasibility condition
    fails, unless ``override_feasibility`` is set or ``gate`` is False.
    Classical-law runs are never gated. Barrier breaches inside a step are
    retried with up to ``MAX_HALVINGS`` step halvings; past that the run
    stops and BarrierAbort carries the partial trajectory and metrics.

    ``engine`` selects the compiled step loop ("numba"), the pure-numpy
    reference ("numpy"), or the compiled loop when available ("auto").
    Halved steps always go through the numpy path.
    """
    if cfg.controller_law == "blf":
        if gate and not override_feasibility:
            rep = feasibility_report(cfg)
            if not rep.c1_satisfied:
                raise InfeasibleConfig(
                    f"feasibility condition fails (margin {rep.c1_margin:.6g}); "
                    "use the override to simulate anyway"
                )
        q0 = cfg.initial_error_energy()
        if not q0 < cfg.xi_prime ** 2:
            raise ValueError(
                f"initial tracking error lies outside the barrier set (e'Pe={q0:.6g} >= {cfg.xi_prime ** 2:.6g})"
            )
    if engine not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown engine {engine!r}")
    kernel = None if engine == "numpy" else _kernel_module()
    if engine == "numba" and kernel is None:
        raise RuntimeError("numba engine requested but numba is not importable")

    loop = ClosedLoop(cfg)
    h = cfg.dt
    n_steps = int(round(cfg.t_end / h))
    loop.tabulate(h, n_steps)
    Y = np.empty((n_steps + 1, loop.size))
    MON = np.zeros((n_steps + 1, 6))
    Y[0] = pack_state(cfg.x0, cfg.xr0, cfg.khat_x0, cfg.khat_r0)
    MON[0, :5] = loop.monitor(0.0, Y[0])
    halvings = 0

    def advance(t, y, h, depth):
        """RK4 over [t, t+h], splitting on barrier breach; returns (y, clamp, monitors)."""
        nonlocal halvings
        try:
            y1 = nx.rk4_step(loop.derivative, t, y, h)
            clamp = loop.clamp(y1)
            mon = loop.monitor(t + h, y1)
            if loop.blf and mon[4] >= loop.guard:
                raise BarrierBreach(mon[4], loop.xp2)
        except BarrierBreach:
            if depth >= MAX_HALVINGS:
                raise
            halvings += 1
            ymid, c1, _ = advance(t, y, 0.5 * h, depth + 1)
            y1, c2, mon = advance(t + 0.5 * h, ymid, 0.5 * h, depth + 1)
            return y1, c1 or c2, mon
        return y1, clamp, mon

    def finish(k_last, aborted=False, reason=""):
        idx = list(range(0, k_last + 1, cfg.log_stride))
        if idx[-1] != k_last:
            idx.append(k_last)
        records = [loop.record(i * h, Y[i], MON[i, 5] > 0.5) for i in idx]
        traj = Trajectory.from_records(records, loop.n, loop.m, aborted, reason)
        metrics = _summarize(MON[: k_last + 1], k_last * h, cfg.constraints, loop.xp2, halvings, aborted)
        return traj, metrics

    if kernel is not None:
        _, R, D, _ = loop._table
        D = np.zeros((R.shape[0], loop.n)) if D is None else D
        kargs = (
            h, R, D, loop.has_dist, loop.n, loop.m, loop.lin, loop.e_stack, loop.blf, loop.xp2,
            loop.guard, loop.u_bar, loop.xa_bar, loop.aux_threshold, loop.bounds[0], loop.bounds[1],
            cfg.projection_epsilon, loop.P,
        )
    k = 0
    while k < n_steps:
        if kernel is not None:
            k, _status = kernel.integrate(Y, MON, k, n_steps, *kargs)
            if k >= n_steps:
                break
        t = k * h
        try:
            y1, clamp, mon = advance(t, Y[k], h, 0)
        except BarrierBreach as exc:
            traj, metrics = finish(k, True, f"barrier abort at t={t:.6g}: {exc}")
            raise BarrierAbort(traj.abort_reason, traj, metrics) from exc
        except NonFiniteDerivative as exc:
            traj, metrics = finish(k, True, f"non-finite derivative at t={t:.6g}")
            raise NonFiniteState(traj.abort_reason, traj, metrics) from exc
        if not np.all(np.isfinite(y1)):
            traj, metrics = finish(k, True, f"non-finite state at t={t + h:.6g}")
            raise NonFiniteState(traj.abort_reason, traj, metrics)
        Y[k + 1] = y1
        MON[k + 1, :5] = mon
        MON[k + 1, 5] = float(clamp)
        k += 1
    return SimResult(*finish(n_steps))
