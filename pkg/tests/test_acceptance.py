"""Acceptance criteria, one test per criterion, each printing a verdict line.

Run with ``pytest -s tests/test_acceptance.py`` to see the PASS/FAIL lines.
Closed-loop criteria use three-seed means on the standard trajectories.
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from coilnav import nmpc
from coilnav import zernike as zk
from coilnav.baselines import lookup_nmpc_solver, solve_timing_comparison
from coilnav.cli import main as cli_main
from coilnav.dynamics import RobotParams, RobotState, integrate_step
from coilnav.estimator import PoseEstimate, SensorReading, kf_step, measurement_cov
from coilnav.harness import ExperimentConfig, run_closed_loop

SEEDS = (0, 1, 2)
BASELINES = ("b1_no_kf", "b2_pid_lut", "b3_lmpc_lut", "b4_lmpc_zernike")
ALL_CONTROLLERS = ("proposed",) + BASELINES


@contextmanager
def verdict(num: int, title: str):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {num:2d} FAIL: {title}")
        raise
    print(f"ACCEPTANCE {num:2d} PASS: {title}")


def run_battery(system, rate_hz, sigma_mm, trajectory="s"):
    """3-seed metrics for every controller at one condition; wall times."""
    out = {}
    for name in ALL_CONTROLLERS:
        t0 = time.perf_counter()
        metrics = []
        for seed in SEEDS:
            cfg = ExperimentConfig(
                controller=name,
                trajectory=trajectory,
                rate_hz=rate_hz,
                sigma_mm=sigma_mm,
                seed=seed,
            )
            m, _ = run_closed_loop(cfg, system=system)
            assert not m.fault, f"{name} faulted at rate={rate_hz} sigma={sigma_mm} seed={seed}"
            metrics.append(m)
        out[name] = (metrics, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def clean_battery(system):
    return run_battery(system, rate_hz=25.5, sigma_mm=0.0)


@pytest.fixture(scope="module")
def noisy_full_rate_battery(system):
    return run_battery(system, rate_hz=25.5, sigma_mm=2.0)


@pytest.fixture(scope="module")
def noisy_low_rate_battery(system):
    return run_battery(system, rate_hz=3.0, sigma_mm=2.0)


def mean_pos(entry):
    return float(np.mean([m.rms_position_mm for m in entry[0]]))


def test_criterion_1_zernike_fit_quality(system):
    with verdict(1, "Zernike fit quality: MAE non-increasing, R2 thresholds, < 10 s"):
        t0 = time.perf_counter()
        reports = {}
        for size, order_needed, r2_order in (("small", 5, 4), ("large", 5, 3)):
            grid = system.class_grids[size].cropped(6).decimated(2)
            cls = system.coils[0]
            center = {"small": 57.69, "large": 90.925}[size]
            frame = zk.DiskFrame(
                center=(0.0, center),
                rho_max={"small": 118.731, "large": 165.341}[size],
            )
            rows = zk.order_selection_report(grid, frame, range(1, 6))
            maes = [r["mae"] for r in rows]
            assert all(b <= a for a, b in zip(maes, maes[1:])), f"{size} MAE not non-increasing"
            r2_at = {r["order"]: r["r2_mean"] for r in rows}
            assert r2_at[r2_order] >= 0.99, f"{size}: R2 {r2_at[r2_order]} < 0.99 at {r2_order}"
            reports[size] = r2_at
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0, f"fit battery took {elapsed:.1f} s"


def test_criterion_2_analytic_gradients(system, packed, magnet_params):
    with verdict(2, "analytic field gradient (1e-6) and rollout gradient (1e-4)"):
        t0 = time.perf_counter()
        worst = zk.gradient_fd_check(system.zernike, n_points=1000, seed=0)
        assert worst <= 1e-6, f"field gradient rel err {worst:.2e}"

        cfg = nmpc.NmpcConfig(horizon=5)
        solver = nmpc.NmpcSolver(packed, magnet_params, cfg)
        rng = np.random.default_rng(1)
        for trial in range(3):
            state = RobotState(
                x=rng.uniform(-20, 20),
                y=rng.uniform(-20, 20),
                theta=rng.uniform(-1, 1),
                vx=rng.uniform(-3, 3),
                vy=rng.uniform(-3, 3),
                omega=rng.uniform(-0.5, 0.5),
            )
            s0 = state.to_si()
            targets = nmpc.as_target_sequence(rng.uniform(-10, 10, 3), 5)
            I = rng.uniform(-3, 3, (5, 8))
            prev = rng.uniform(-1, 1, 8)
            _, g, _ = solver.objective_grad(s0, I, targets, prev)
            eps = 1e-6
            worst_fd = 0.0
            scale = 0.0
            for k in range(5):
                for c in range(8):
                    up = I.copy()
                    up[k, c] += eps
                    dn = I.copy()
                    dn[k, c] -= eps
                    fd = (
                        solver.objective(s0, up, targets, prev)
                        - solver.objective(s0, dn, targets, prev)
                    ) / (2 * eps)
                    worst_fd = max(worst_fd, abs(fd - g[k, c]))
                    scale = max(scale, abs(fd))
            assert worst_fd / scale <= 1e-4, f"rollout gradient rel err {worst_fd / scale:.2e}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 30.0, f"gradient battery took {elapsed:.1f} s"


def test_criterion_3_divergence(system):
    with verdict(3, "fitted-model RMS divergence <= 5% of RMS gradient norm"):
        ratio = zk.divergence_stats(system.zernike, n_points=1000, seed=0)
        assert ratio <= 0.05, f"divergence ratio {ratio:.4f}"


def test_criterion_4_dynamics_oracle(magnet_params, zero_field):
    with verdict(4, "RK4 drag-decay oracle (1e-6) and passivity over 1e4 steps"):
        # Decay checked at the plant's integration sub-step (10 ms).
        v0 = 10.0
        st = RobotState(x=0, y=0, theta=0.0, vx=v0)
        for _ in range(100):
            st = integrate_step(st, np.zeros(8), 0.01, zero_field, magnet_params)
        expected = v0 * np.exp(-magnet_params.d_par / magnet_params.mass)
        assert abs(st.vx - expected) / expected <= 1e-6

        rng = np.random.default_rng(2)
        p = magnet_params
        for _ in range(10_000):
            st = RobotState(
                x=rng.uniform(-40, 40),
                y=rng.uniform(-40, 40),
                theta=rng.uniform(-np.pi, np.pi),
                vx=rng.uniform(-20, 20),
                vy=rng.uniform(-20, 20),
                omega=rng.uniform(-5, 5),
            )
            s = st.to_si()
            ke0 = 0.5 * p.mass * (s[3] ** 2 + s[4] ** 2) + 0.5 * p.inertia * s[5] ** 2
            out = integrate_step(st, np.zeros(8), 0.04, zero_field, p).to_si()
            ke1 = 0.5 * p.mass * (out[3] ** 2 + out[4] ** 2) + 0.5 * p.inertia * out[5] ** 2
            assert ke1 <= ke0 * (1 + 1e-12)


def test_criterion_5_closed_loop_accuracy(clean_battery):
    with verdict(5, "submillimeter RMS for proposed and baselines 1-4 (3-seed mean)"):
        for name in ALL_CONTROLLERS:
            metrics, elapsed = clean_battery[name]
            mean_rms = float(np.mean([m.rms_position_mm for m in metrics]))
            assert mean_rms < 1.0, f"{name}: {mean_rms:.3f} mm"
            assert elapsed < 300.0, f"{name}: battery took {elapsed:.0f} s"


def test_criterion_6_prediction_accuracy(clean_battery):
    with verdict(6, "one-step prediction RMS <= 1.0 mm and <= 8 deg (proposed, clean)"):
        metrics, _ = clean_battery["proposed"]
        pred_mm = float(np.mean([m.prediction_rms_mm for m in metrics]))
        pred_deg = float(np.mean([m.prediction_rms_deg for m in metrics]))
        assert pred_mm <= 1.0, f"prediction {pred_mm:.3f} mm"
        assert pred_deg <= 8.0, f"prediction {pred_deg:.2f} deg"


def test_criterion_7_noise_robustness_ordering(clean_battery, noisy_full_rate_battery):
    with verdict(7, "noise-induced error growth smallest for the proposed method"):
        deltas = {
            name: mean_pos(noisy_full_rate_battery[name]) - mean_pos(clean_battery[name])
            for name in ALL_CONTROLLERS
        }
        for name in BASELINES:
            assert deltas["proposed"] < deltas[name], (
                f"delta(proposed)={deltas['proposed']:.3f} !< delta({name})={deltas[name]:.3f}"
            )


def test_criterion_8_low_rate_fixed_noise_ordering(
    noisy_low_rate_battery, noisy_full_rate_battery
):
    with verdict(8, "at 3 Hz / sigma 2 mm the proposed method beats every baseline"):
        prop = mean_pos(noisy_low_rate_battery["proposed"])
        for name in BASELINES:
            other = mean_pos(noisy_low_rate_battery[name])
            assert prop < other, f"proposed {prop:.3f} !< {name} {other:.3f}"
        pid_low = mean_pos(noisy_low_rate_battery["b2_pid_lut"])
        pid_full = mean_pos(noisy_full_rate_battery["b2_pid_lut"])
        assert pid_low >= 3.0 * pid_full, f"PID degradation {pid_low / pid_full:.2f}x < 3x"


def test_criterion_9_spine_corridor(system):
    with verdict(9, "corridor at 3 Hz / sigma 2 mm: <= 1.5 mm, <= 10 deg, no violations"):
        t0 = time.perf_counter()
        pos, ang, viol = [], [], 0
        for seed in SEEDS:
            cfg = ExperimentConfig(
                controller="proposed",
                trajectory="corridor",
                rate_hz=3.0,
                sigma_mm=2.0,
                seed=seed,
            )
            m, _ = run_closed_loop(cfg, system=system)
            assert not m.fault
            pos.append(m.rms_position_mm)
            ang.append(m.rms_orientation_deg)
            viol += m.boundary_violations
        elapsed = time.perf_counter() - t0
        assert float(np.mean(pos)) <= 1.5, f"corridor position {np.mean(pos):.3f} mm"
        assert float(np.mean(ang)) <= 10.0, f"corridor orientation {np.mean(ang):.2f} deg"
        assert viol == 0, f"{viol} anterior-boundary violations"
        assert elapsed < 300.0, f"corridor battery took {elapsed:.0f} s"


def test_criterion_10_lookup_nmpc_timing(system, packed, magnet_params):
    with verdict(10, "table-driven NMPC >= 3x slower; analytic median <= 40 ms"):
        cfg = nmpc.NmpcConfig()
        zsolver = nmpc.NmpcSolver(packed, magnet_params, cfg)
        lsolver = lookup_nmpc_solver(system.lookup, magnet_params, cfg)
        rng = np.random.default_rng(3)
        states, targets = [], []
        for _ in range(9):
            x, y = rng.uniform(-20, 20, 2)
            states.append(RobotState(x=x, y=y, theta=rng.uniform(-2, 2)))
            targets.append(np.array([x, y, 0.0]) + rng.uniform(-3, 3, 3))
        res = solve_timing_comparison(zsolver, lsolver, states, targets)
        assert res["median_a_s"] <= 0.040, f"analytic median {res['median_a_s'] * 1e3:.1f} ms"
        assert res["ratio"] >= 3.0, f"timing ratio {res['ratio']:.1f}x"


def test_criterion_11_estimator_properties():
    with verdict(11, "Kalman limiting cases, wrapped innovation, RMS <= raw"):
        q = np.eye(3)
        prev = PoseEstimate(pose=np.zeros(3), covariance=np.eye(3))
        z = SensorReading(t=0.0, x=4.0, y=-2.0, theta=0.7)
        near = kf_step(prev, np.zeros(3), z, q, 1e-12 * np.eye(3))
        assert np.abs(near.pose - z.pose()).max() <= 1e-9
        far = kf_step(prev, np.array([1.0, 1.0, 0.1]), z, 1e-9 * np.eye(3), 1e12 * np.eye(3))
        assert np.abs(far.pose - [1.0, 1.0, 0.1]).max() <= 1e-9

        # wrapped innovation: 3.1 predicted vs -3.1 measured -> +0.0832 rad
        innovation = float(np.pi - np.remainder(np.pi - (-3.1 - 3.1), 2 * np.pi))
        assert innovation == pytest.approx(-6.2 + 2 * np.pi, abs=1e-12)

        sigma = 2.0
        q = np.diag([0.1**2, 0.1**2, np.deg2rad(0.5) ** 2])
        rm = measurement_cov(sigma, np.deg2rad(5.0))
        ratios = []
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            e = PoseEstimate(pose=np.zeros(3), covariance=0.01 * np.eye(3))
            err_est, err_raw = [], []
            for k in range(500):
                t = k * 0.04
                truth = np.array([8 * np.sin(0.4 * t), 8 * np.cos(0.3 * t), 0.3 * np.sin(t)])
                pred = truth + rng.normal(0, 0.05, 3)
                zr = SensorReading(
                    t=t,
                    x=truth[0] + rng.normal(0, sigma),
                    y=truth[1] + rng.normal(0, sigma),
                    theta=truth[2] + rng.normal(0, np.deg2rad(5.0)),
                )
                e = kf_step(e, pred, zr, q, rm)
                err_est.append(np.hypot(*(e.pose[:2] - truth[:2])))
                err_raw.append(np.hypot(zr.x - truth[0], zr.y - truth[1]))
            ratios.append(
                np.sqrt(np.mean(np.square(err_est))) / np.sqrt(np.mean(np.square(err_raw)))
            )
        assert float(np.mean(ratios)) <= 1.0, f"estimate/raw RMS ratio {np.mean(ratios):.3f}"


def test_criterion_12_run_determinism(tmp_path):
    with verdict(12, "repeated `run` gives byte-identical metrics.csv"):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "controller": "proposed",
                    "trajectory": "s",
                    "duration_s": 6.0,
                    "rate_hz": 3.0,
                    "sigma_mm": 2.0,
                    "seed": 1,
                }
            )
        )
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli_main(["run", "--config", str(cfg_path), "--out-dir", str(a)]) == 0
        assert cli_main(["run", "--config", str(cfg_path), "--out-dir", str(b)]) == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
