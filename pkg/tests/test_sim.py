import numpy as np
import pytest

from bench import K_R, K_X
from cmrac import sim
from cmrac.controller import ControllerGains
from cmrac.errors import BarrierAbort, DimensionMismatch, EmptyTrajectory, InfeasibleConfig
from cmrac.models import ConstraintSpec, PlantModel, ReferenceModel
from cmrac.signals import DisturbanceSpec, SignalSpec, Sinusoid


def no_disturbance(n):
    return DisturbanceSpec(SignalSpec.constant(np.zeros(n)), onset=0.0, norm_cap=0.0)


def zero_config(law="blf"):
    n = 2
    return sim.SimConfig(
        plant=PlantModel(np.zeros((n, n)), np.eye(n)),
        reference=ReferenceModel(-np.eye(n), np.eye(n)),
        constraints=ConstraintSpec(2.0, 5.0, 1.5, 0.0, 1.0, 1.0),
        gains=ControllerGains.from_reference(-np.eye(n), np.eye(n), np.eye(n), np.eye(n), law),
        reference_signal=SignalSpec.constant(np.zeros(n)),
        disturbance=no_disturbance(n),
        x0=np.zeros(n),
        xr0=np.zeros(n),
        t_end=1.0,
        dt=0.01,
    )


class TestPacking:
    def test_scalar_round_trip(self):
        y = sim.pack_state([1.0], [2.0], [[3.0]], [[4.0]])
        np.testing.assert_array_equal(y, [1, 2, 3, 4])
        x, xr, kx, kr = sim.unpack_state(y, 1, 1)
        assert (x[0], xr[0], kx[0, 0], kr[0, 0]) == (1, 2, 3, 4)

    def test_zero_and_length(self):
        y = sim.pack_state(np.zeros(4), np.zeros(4), np.zeros((2, 4)), np.zeros((2, 2)))
        assert y.shape == (20,) and not y.any()

    def test_column_major(self):
        kx = np.arange(8.0).reshape(2, 4)
        y = sim.pack_state(np.zeros(4), np.zeros(4), kx, np.eye(2))
        np.testing.assert_array_equal(y[8:16], kx.ravel(order="F"))
        rng = np.random.default_rng(1)
        parts = (rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal((2, 4)), rng.standard_normal((2, 2)))
        for a, b in zip(sim.unpack_state(sim.pack_state(*parts), 4, 2), parts):
            np.testing.assert_array_equal(a, b)

    def test_bad_length(self):
        with pytest.raises(DimensionMismatch):
            sim.unpack_state(np.zeros(19), 4, 2)


class TestDerivative:
    def test_zero_error_kills_adaptation(self, sec5):
        cfg = sec5.sim_config("blf")
        x = np.array([0.5, -0.2, 0.1, 0.3])
        kx = 0.3 * K_X
        y = sim.pack_state(x, x, kx, K_R)
        dy = sim.closed_loop_derivative(cfg, 0.0, y)
        assert not dy[8:].any()
        r = cfg.reference_signal(0.0)
        u = kx @ x + K_R @ r
        np.testing.assert_allclose(dy[:4], cfg.plant.A @ x + cfg.plant.B @ u, atol=1e-15)

    def test_perfect_matching(self, sec5):
        cfg = sec5.sim_config("blf")
        x = np.array([0.5, -0.2, 0.1, 0.3])
        dy = sim.closed_loop_derivative(cfg, 1.0, sim.pack_state(x, x, K_X, K_R))
        np.testing.assert_allclose(dy[:4], dy[4:8], atol=1e-14)

    def test_saturated_input_logged(self, sec5):
        cfg = sec5.sim_config("classical", khat_x0=np.full((2, 4), 0.55), t_end=0.01, dt=0.01)
        x0 = np.array([5.0, 5.0, 4.0, 4.0])
        cfg = cfg.replace(x0=x0, xr0=x0)
        traj, metrics = sim.run_scenario(cfg, engine="numpy")
        assert traj.column("v_norm")[0] > 12
        assert np.linalg.norm(traj.u[0]) == pytest.approx(12.0, rel=1e-15)
        assert traj.column("delta_u_norm")[0] > 0
        assert metrics.saturation_fraction > 0


class TestRun:
    def test_zero_dynamics(self):
        res = sim.run_scenario(zero_config(), override_feasibility=True, engine="numpy")
        data = res.trajectory.data
        blf_v1 = res.trajectory.columns.index("blf_v1")
        assert not np.delete(data[:, 1:], blf_v1 - 1, axis=1).any()
        assert not data[:, blf_v1].any()
        assert res.metrics.max_x_norm == 0 and res.metrics.state_constraint_ok

    def test_deterministic(self, sec5, warm_kernel):
        cfg = sec5.sim_config("blf", t_end=22.0)
        a = sim.run_scenario(cfg)
        b = sim.run_scenario(cfg)
        assert np.array_equal(a.trajectory.data, b.trajectory.data, equal_nan=True)
        assert a.metrics == b.metrics

    @pytest.mark.parametrize("law, x0", [("blf", [0.3, 0.0, -0.2, 0.1]), ("classical", None)])
    def test_kernel_matches_numpy(self, sec5, warm_kernel, law, x0):
        cfg = sec5.sim_config(law, t_end=25.0)
        if x0 is not None:
            cfg = cfg.replace(x0=np.array(x0), xr0=np.array(x0))
        a = sim.run_scenario(cfg, engine="numba")
        b = sim.run_scenario(cfg, engine="numpy")
        assert a.metrics.halvings == b.metrics.halvings == 0
        np.testing.assert_allclose(a.trajectory.data, b.trajectory.data, rtol=0, atol=1e-12)

    def test_kernel_verdicts_match_on_stiff_start(self, sec5, warm_kernel):
        # the startup transient halves steps on stage-level barrier hits, so
        # roundoff can flip individual halvings; verdicts and maxima must agree
        cfg = sec5.sim_config("blf", t_end=21.0)
        a = sim.run_scenario(cfg, engine="numba").metrics
        b = sim.run_scenario(cfg, engine="numpy").metrics
        for k in ("max_x_norm", "max_u_norm", "max_e_norm", "max_eTPe_over_xiprime2"):
            assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-9)
        for k in ("state_constraint_ok", "input_constraint_ok", "omega_e_ok", "aborted"):
            assert getattr(a, k) == getattr(b, k)

    def test_classical_not_gated(self, sec5):
        cfg = sec5.sim_config("classical", t_end=0.05).replace(
            constraints=ConstraintSpec(6.5, 1.0, 6.4, 1.2, 1.6, 0.6)
        )
        sim.run_scenario(cfg, engine="numpy")
        with pytest.raises(InfeasibleConfig):
            sim.run_scenario(cfg.replace(gains=cfg.gains.with_law("blf")), engine="numpy")

    def test_error_outside_barrier_rejected(self, sec5):
        cfg = sec5.sim_config("blf", t_end=0.05)
        with pytest.raises(ValueError, match="barrier"):
            sim.run_scenario(cfg.replace(x0=cfg.xr0 + 0.2))

    def test_unmatched_disturbance_aborts_with_partial_log(self, sec5):
        chans = tuple((Sinusoid(1.2, 1.0),) for _ in range(4))
        dist = DisturbanceSpec(SignalSpec(chans), onset=0.5, norm_cap=1.2)
        cfg = sec5.sim_config("blf", t_end=2.0).replace(disturbance=dist)
        with pytest.raises(BarrierAbort) as err:
            sim.run_scenario(cfg, engine="numpy")
        traj, metrics = err.value.trajectory, err.value.metrics
        assert traj.aborted and "barrier" in traj.abort_reason
        assert 0.5 <= traj.t[-1] < 2.0
        assert metrics.aborted and metrics.omega_e_ok
        assert metrics.halvings > 0

    def test_structural_bounds_on_random_configs(self, sec5):
        rng = np.random.default_rng(13)
        for _ in range(40):
            law = "classical" if rng.random() < 0.5 else "blf"
            u_bar = rng.uniform(0.5, 15)
            cs = ConstraintSpec(6.5, u_bar, 6.4, 1.2, rng.uniform(0.1, 2), rng.uniform(0.1, 1))
            g = ControllerGains.from_reference(
                sec5.reference.A_r, np.eye(4), rng.uniform(1, 40) * np.eye(2), rng.uniform(1, 40) * np.eye(2), law
            )
            x0 = rng.uniform(-1, 1, 4)
            cfg = sec5.sim_config(law, t_end=1.0, dt=0.01).replace(
                constraints=cs, gains=g, x0=x0, xr0=x0, khat_x0=np.zeros((2, 4))
            )
            try:
                res = sim.run_scenario(cfg, override_feasibility=True, engine="numpy")
                traj, m = res
            except BarrierAbort as exc:
                traj, m = exc.trajectory, exc.metrics
            assert m.max_u_norm <= u_bar + 1e-12
            assert np.linalg.norm(traj.u, axis=1).max() <= u_bar + 1e-12
            assert traj.column("khatx_fro").max() <= cs.kx_bar + 1e-6
            assert traj.column("khatr_fro").max() <= cs.kr_bar + 1e-6

    def test_dt_halving_invariance(self, sec5, warm_kernel):
        a = sim.run_scenario(sec5.sim_config("blf"))
        b = sim.run_scenario(sec5.sim_config("blf", dt=5e-4, log_stride=20))
        assert abs(a.metrics.max_e_norm - b.metrics.max_e_norm) < 1e-4


class TestMetrics:
    def _traj(self, x_row):
        data = np.zeros((1, len(sim.trajectory_columns(2, 2))))
        data[0, 1:3] = x_row
        return sim.Trajectory(2, 2, data)

    def test_zero_record(self):
        m = sim.compute_metrics(self._traj([0.0, 0.0]), ConstraintSpec(2.0, 1.0, 1.0, 0.0, 1.0, 1.0), np.eye(2))
        assert m.max_x_norm == m.max_u_norm == m.max_e_norm == 0
        assert m.state_constraint_ok and m.input_constraint_ok and m.omega_e_ok

    def test_strict_state_bound(self):
        m = sim.compute_metrics(self._traj([2.0, 0.0]), ConstraintSpec(2.0, 1.0, 1.0, 0.0, 1.0, 1.0), np.eye(2))
        assert not m.state_constraint_ok

    def test_empty(self):
        empty = sim.Trajectory.from_records([], 2, 2)
        with pytest.raises(EmptyTrajectory):
            sim.compute_metrics(empty, ConstraintSpec(2.0, 1.0, 1.0, 0.0, 1.0, 1.0), np.eye(2))

    def test_columns(self):
        cols = sim.trajectory_columns(2, 1)
        assert cols[:3] == ["t", "x_1", "x_2"]
        assert list(cols[-5:]) == ["eTPe", "blf_v1", "khatx_fro", "khatr_fro", "clamp"]
        assert len(cols) == 1 + 3 * 2 + 1 + 2 + 2 + 6
