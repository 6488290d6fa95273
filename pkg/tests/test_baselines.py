import numpy as np
import pytest

from coilnav import baselines as bl
from coilnav import nmpc
from coilnav.dynamics import RobotParams, RobotState
from coilnav.estimator import SensorReading


@pytest.fixture(scope="module")
def alloc(system, magnet_params):
    return bl.AllocationMap(system.lookup, magnet_params)


class TestAllocation:
    def test_zero_command_zero_currents(self, alloc):
        cmd = bl.WrenchCommand(force=np.zeros(2), torque=0.0)
        I = bl.allocate_currents(cmd, np.array([0.0, 0.0, 0.0]), alloc)
        assert np.allclose(I, 0.0)

    def test_achievable_command_residual(self, alloc):
        pose = np.array([5.0, -3.0, 0.4])
        cmd = bl.WrenchCommand(force=np.array([2e-6, -1e-6]), torque=3e-8)
        I = bl.allocate_currents(cmd, pose, alloc)
        A = alloc.matrix(pose)
        resid = np.linalg.norm(A @ I - cmd.vector()) / np.linalg.norm(cmd.vector())
        assert resid <= 1e-8

    def test_linearity_within_limits(self, alloc):
        pose = np.array([0.0, 0.0, 0.0])
        cmd1 = bl.WrenchCommand(force=np.array([1e-6, 0.0]), torque=0.0)
        cmd2 = bl.WrenchCommand(force=np.array([3e-6, 0.0]), torque=0.0)
        I1 = bl.allocate_currents(cmd1, pose, alloc)
        I2 = bl.allocate_currents(cmd2, pose, alloc)
        assert np.allclose(I2, 3 * I1, rtol=1e-9)

    def test_box_scaling(self, alloc):
        pose = np.array([0.0, 0.0, 0.0])
        cmd = bl.WrenchCommand(force=np.array([1.0, 0.0]), torque=0.0)  # absurdly large
        I = bl.allocate_currents(cmd, pose, alloc, i_max=30.0)
        assert np.abs(I).max() == pytest.approx(30.0)

    def test_singularity_raises(self, magnet_params):
        class DegenerateModel:
            n_coils = 8

            def percoil(self, x, y):
                B = np.tile([[1e-4, 0.0]], (8, 1))
                G = np.zeros((8, 2, 2))
                return B, G

        degen = bl.AllocationMap(DegenerateModel(), magnet_params)
        with pytest.raises(bl.ActuationSingularityError):
            bl.allocate_currents(
                bl.WrenchCommand(force=np.array([1e-6, 0.0]), torque=0.0),
                np.array([0.0, 0.0, 0.0]),
                degen,
            )

    def test_cache_rebuild_thresholds(self, system, magnet_params):
        a = bl.AllocationMap(system.lookup, magnet_params)
        a.matrix(np.array([0.0, 0.0, 0.0]))
        builds = a.builds
        a.matrix(np.array([0.5, 0.0, 0.0]))  # below 1 mm
        assert a.builds == builds
        a.matrix(np.array([1.5, 0.0, 0.0]))
        assert a.builds == builds + 1
        a.matrix(np.array([1.5, 0.0, np.deg2rad(3.0)]))  # above 2 degrees
        assert a.builds == builds + 2


class TestPid:
    def test_zero_error_zero_command(self):
        pid = bl.PidWrench(bl.PidGains(), 0.04)
        cmd = pid.step([1.0, 2.0, 0.3], [1.0, 2.0, 0.3])
        assert np.allclose(cmd.vector(), 0.0)

    def test_pure_proportional_example(self):
        # 1 mm error with Kp = 2e-6 N/mm gives 2e-6 N.
        gains = bl.PidGains(kp_pos=2e-3, ki_pos=0.0, kd_pos=0.0)
        pid = bl.PidWrench(gains, 0.04)
        cmd = pid.step([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert cmd.force[0] == pytest.approx(2e-6)

    def test_theta_error_wrapped(self):
        gains = bl.PidGains(ki_th=0.0, kd_th=0.0)
        pid = bl.PidWrench(gains, 0.04)
        cmd = pid.step([0.0, 0.0, np.pi - 0.01], [0.0, 0.0, -np.pi + 0.01])
        assert abs(cmd.torque) <= gains.kp_th * np.pi
        assert cmd.torque == pytest.approx(gains.kp_th * 0.02, rel=1e-9)

    def test_integral_clamp(self):
        gains = bl.PidGains(kp_pos=0.0, ki_pos=1.0, kd_pos=0.0, integral_clamp_pos=1e-3)
        pid = bl.PidWrench(gains, 1.0)
        for _ in range(100):
            cmd = pid.step([0.0, 0.0, 0.0], [1000.0, 0.0, 0.0])
        assert cmd.force[0] == pytest.approx(1e-3)


class TestLinearMpc:
    def test_zero_wrench_at_target_rest(self, magnet_params):
        mpc = bl.LinearMpc(magnet_params)
        z = np.array([0.005, -0.003, 0.2, 0.0, 0.0, 0.0])
        refs = np.tile(z, (mpc.cfg.horizon + 1, 1))
        cmd, _ = mpc.solve(z, refs)
        assert np.abs(cmd.vector()).max() <= 1e-12

    def test_first_wrench_matches_dense_ls_solution(self, magnet_params):
        # Independent oracle: the unconstrained LQ tracking problem solved
        # as one dense least-squares system over all inputs.
        cfg = bl.LinearMpcConfig(horizon=6, f_max=1.0, tau_max=1.0)
        mpc = bl.LinearMpc(magnet_params, cfg)
        rng = np.random.default_rng(0)
        z0 = np.array([0.001, -0.002, 0.1, 0.0005, 0.0, 0.05])
        refs = rng.normal(0, 1e-3, (7, 6))
        refs[:, 2] = rng.normal(0, 0.2, 7)
        Ad, Bd = mpc._discretize(z0[2])
        n, m = 6, 3
        N = cfg.horizon
        F = np.zeros((N * n, N * m))
        f = np.zeros(N * n)
        Ak = np.eye(n)
        powers = [np.eye(n)]
        for k in range(N):
            powers.append(Ad @ powers[-1])
        for k in range(1, N + 1):
            f[(k - 1) * n : k * n] = powers[k] @ z0
            for j in range(k):
                F[(k - 1) * n : k * n, j * m : (j + 1) * m] = powers[k - 1 - j] @ Bd
        Wsq = [np.linalg.cholesky(mpc.Q) for _ in range(N - 1)] + [np.linalg.cholesky(mpc.P)]
        rows = []
        rhs = []
        for k in range(1, N + 1):
            W = Wsq[k - 1].T
            rows.append(W @ F[(k - 1) * n : k * n])
            rhs.append(W @ (refs[k] - f[(k - 1) * n : k * n]))
        Rsq = np.linalg.cholesky(mpc.R).T
        for j in range(N):
            block = np.zeros((m, N * m))
            block[:, j * m : (j + 1) * m] = Rsq
            rows.append(block)
            rhs.append(np.zeros(m))
        sol, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
        cmd, _ = mpc.solve(z0, refs)
        assert np.allclose(cmd.vector(), sol[:3], rtol=1e-6, atol=1e-12)

    def test_frozen_drag_decouples_at_zero_heading(self, magnet_params):
        mpc = bl.LinearMpc(magnet_params)
        Ad, Bd = mpc._discretize(0.0)
        # x block (indices 0,3) independent of y block (1,4)
        assert Ad[0, 1] == 0.0 and Ad[0, 4] == 0.0
        assert Ad[3, 1] == 0.0 and Ad[3, 4] == 0.0
        assert Bd[0, 1] == 0.0 and Bd[3, 1] == 0.0

    def test_wrench_clamped(self, magnet_params):
        cfg = bl.LinearMpcConfig(f_max=1e-6, tau_max=1e-9)
        mpc = bl.LinearMpc(magnet_params, cfg)
        z = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        refs = np.tile([0.04, 0.04, 1.0, 0, 0, 0], (cfg.horizon + 1, 1))
        cmd, _ = mpc.solve(z, refs)
        assert abs(cmd.force[0]) <= 1e-6 and abs(cmd.torque) <= 1e-9


class TestControllers:
    def test_b1_matches_proposed_under_exact_full_rate_feedback(self, system, magnet_params):
        from coilnav.estimator import measurement_cov

        cfg = nmpc.NmpcConfig()
        proposed = nmpc.ProposedController(
            nmpc.NmpcSolver(system.packed(), magnet_params, cfg),
            r_cov=measurement_cov(0.0, 0.0),
        )
        b1 = bl.Baseline1NoKf(nmpc.NmpcSolver(system.packed(), magnet_params, cfg))
        start = np.array([0.0, 0.0, 0.0])
        for c in (proposed, b1):
            c.reset(start, 0.0)
        target = np.array([3.0, 2.0, 0.2])
        meas = SensorReading(t=0.0, x=0.0, y=0.0, theta=0.0)
        r1 = proposed.step(0.0, meas, target)
        r2 = b1.step(0.0, meas, target)
        assert np.abs(r1.currents - r2.currents).max() <= 1e-9

    def test_b1_uses_prediction_during_gaps(self, system, magnet_params):
        b1 = bl.Baseline1NoKf(nmpc.NmpcSolver(system.packed(), magnet_params, nmpc.NmpcConfig()))
        b1.reset(np.array([0.0, 0.0, 0.0]), 0.0)
        r1 = b1.step(0.0, SensorReading(t=0.0, x=0.0, y=0.0, theta=0.0), np.array([3.0, 2.0, 0.2]))
        r2 = b1.step(0.04, None, np.array([3.0, 2.0, 0.2]))
        assert r2.est_source == "predicted"
        assert np.allclose(r2.est_pose, r1.predicted_pose)

    def test_pid_controller_holds_last_measurement(self, system, magnet_params):
        ctrl = bl.PidLutController(system.lookup, magnet_params, 0.04)
        ctrl.reset(np.array([0.0, 0.0, 0.0]), 0.0)
        meas = SensorReading(t=0.0, x=1.0, y=2.0, theta=0.1)
        ctrl.step(0.0, meas, np.array([0.0, 0.0, 0.0]))
        r = ctrl.step(0.04, None, np.array([0.0, 0.0, 0.0]))
        assert r.est_source == "held"
        assert np.allclose(r.est_pose, meas.pose())

    def test_b5_produces_feasible_currents(self, system, magnet_params):
        cfg = nmpc.NmpcConfig(max_iterations=10)
        ctrl = bl.Baseline5NmpcLut(bl.lookup_nmpc_solver(system.lookup, magnet_params, cfg))
        ctrl.reset(np.array([0.0, 0.0, 0.0]), 0.0)
        r = ctrl.step(0.0, SensorReading(t=0.0, x=0.0, y=0.0, theta=0.0), np.array([4.0, 0.0, 0.0]))
        assert np.abs(r.currents).max() <= 30.0 + 1e-12

    def test_lookup_and_zernike_fields_agree(self, system):
        # Cross-model consistency within combined fit + interpolation error.
        rng = np.random.default_rng(8)
        for _ in range(100):
            p = rng.uniform(-49, 49, 2)
            I = rng.uniform(-5, 5, 8)
            B1 = system.lookup.eval(p, I)
            B2 = system.zernike.eval_field(p, I)
            bound = np.abs(I).sum() * 8e-6
            assert np.abs(B1 - B2).max() <= bound
