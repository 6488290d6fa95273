import numpy as np
import pytest

from coilnav import estimator as est


def make_est(pose=(0.0, 0.0, 0.0), cov=1.0):
    return est.PoseEstimate(pose=np.array(pose, dtype=float), covariance=cov * np.eye(3))


class TestKalmanStep:
    def test_gain_one_limit(self):
        # Rm -> 0: the estimate collapses onto the measurement.
        q = np.eye(3)
        rm = 1e-12 * np.eye(3)
        z = est.SensorReading(t=0.0, x=5.0, y=-3.0, theta=0.5)
        out = est.kf_step(make_est(), np.zeros(3), z, q, rm)
        assert np.abs(out.pose - z.pose()).max() <= 1e-9
        assert out.source == "fused"

    def test_gain_zero_limit(self):
        # Rm -> infinity: the estimate stays at the prediction.
        q = 1e-6 * np.eye(3)
        rm = 1e12 * np.eye(3)
        pred = np.array([1.0, 2.0, 0.3])
        z = est.SensorReading(t=0.0, x=50.0, y=-50.0, theta=-3.0)
        out = est.kf_step(make_est(cov=1e-6), pred, z, q, rm)
        assert np.abs(out.pose - pred).max() <= 1e-9

    def test_innovation_wraps(self):
        # predicted 3.1, measured -3.1: innovation +0.0832, not -6.2.
        q = np.eye(3)
        rm = 1e-12 * np.eye(3)
        z = est.SensorReading(t=0.0, x=0.0, y=0.0, theta=-3.1)
        out = est.kf_step(make_est(pose=(0, 0, 3.1)), np.array([0, 0, 3.1]), z, q, rm)
        # with gain ~1 the fused angle lands on the measurement, reached
        # via the short way around
        assert out.pose[2] == pytest.approx(-3.1, abs=1e-6)

    def test_missing_measurement_returns_prediction(self):
        q = 0.5 * np.eye(3)
        prev = make_est(cov=1.0)
        out = est.kf_step(prev, np.array([1.0, 1.0, 0.1]), None, q, np.eye(3))
        assert out.source == "predicted"
        assert np.allclose(out.pose, [1.0, 1.0, 0.1])
        assert np.allclose(out.covariance, 1.5 * np.eye(3))

    def test_covariance_inflates_across_gaps(self):
        q = 0.2 * np.eye(3)
        e = make_est(cov=0.1)
        for k in range(5):
            e = est.kf_step(e, np.zeros(3), None, q, np.eye(3))
        assert np.allclose(e.covariance, (0.1 + 5 * 0.2) * np.eye(3))

    def test_non_finite_raises(self):
        with pytest.raises(est.EstimatorFaultError):
            est.kf_step(make_est(), np.array([np.nan, 0, 0]), None, np.eye(3), np.eye(3))

    def test_psd_repair(self):
        bad = est.PoseEstimate(pose=np.zeros(3), covariance=np.diag([1.0, -0.5, 1.0]))
        out = est.kf_step(bad, np.zeros(3), None, 0.0 * np.eye(3), np.eye(3))
        assert np.linalg.eigvalsh(out.covariance).min() >= 0.0

    def test_time_origin_invariance(self):
        q = 0.3 * np.eye(3)
        rm = 0.7 * np.eye(3)
        z1 = est.SensorReading(t=0.0, x=1.0, y=2.0, theta=0.1)
        z2 = est.SensorReading(t=1000.0, x=1.0, y=2.0, theta=0.1)
        o1 = est.kf_step(make_est(), np.zeros(3), z1, q, rm)
        o2 = est.kf_step(make_est(), np.zeros(3), z2, q, rm)
        assert np.array_equal(o1.pose, o2.pose)

    def test_stationary_variance_converges_below_measurement(self):
        rng = np.random.default_rng(0)
        q = 1e-4 * np.eye(3)
        sigma = 2.0
        rm = est.measurement_cov(sigma, np.deg2rad(5.0))
        e = make_est(cov=4.0)
        prev_var = np.inf
        for k in range(200):
            z = est.SensorReading(
                t=k * 0.04,
                x=rng.normal(0, sigma),
                y=rng.normal(0, sigma),
                theta=rng.normal(0, np.deg2rad(5.0)),
            )
            e = est.kf_step(e, e.pose, z, q, rm)
            var = e.covariance[0, 0]
            assert var <= prev_var + 1e-12
            prev_var = var
        assert prev_var < sigma**2

    def test_estimate_rms_beats_raw_measurements(self):
        # Slow sinusoidal truth, good predictions, Gaussian measurements:
        # filter output error must not exceed the raw measurement error.
        sigma = 2.0
        q = np.diag([0.1**2, 0.1**2, np.deg2rad(0.5) ** 2])
        rm = est.measurement_cov(sigma, np.deg2rad(5.0))
        ratios = []
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            e = make_est(cov=0.01)
            err_est, err_raw = [], []
            for k in range(600):
                t = k * 0.04
                truth = np.array([10 * np.sin(0.3 * t), 10 * np.cos(0.23 * t), 0.2 * np.sin(t)])
                pred = truth + rng.normal(0, 0.05, 3)  # near-exact model prediction
                z = est.SensorReading(
                    t=t,
                    x=truth[0] + rng.normal(0, sigma),
                    y=truth[1] + rng.normal(0, sigma),
                    theta=truth[2] + rng.normal(0, np.deg2rad(5.0)),
                )
                e = est.kf_step(e, pred, z, q, rm)
                err_est.append(np.hypot(*(e.pose[:2] - truth[:2])))
                err_raw.append(np.hypot(z.x - truth[0], z.y - truth[1]))
            ratios.append(np.sqrt(np.mean(np.square(err_est))) / np.sqrt(np.mean(np.square(err_raw))))
        assert np.mean(ratios) <= 1.0


class TestRates:
    def test_zero_for_identical_poses(self):
        assert est.estimate_rates([1, 2, 0.3], [1, 2, 0.3], 0.04) == (0.0, 0.0, 0.0)

    def test_linear_rate(self):
        vx, vy, om = est.estimate_rates([2.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.04)
        assert vx == pytest.approx(50.0)
        assert vy == 0.0 and om == 0.0

    def test_wrapped_angular_rate(self):
        _, _, om = est.estimate_rates([0, 0, -3.1], [0, 0, 3.1], 0.04)
        expected = (-6.2 + 2 * np.pi) / 0.04
        assert om == pytest.approx(expected, rel=1e-12)
        assert abs(om) < 3.0  # not the naive -155 rad/s

    def test_invalid_interval(self):
        with pytest.raises(est.InvalidIntervalError):
            est.estimate_rates([0, 0, 0], [0, 0, 0], 0.0)
