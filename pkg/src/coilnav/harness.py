"""Experiment orchestration: trajectories, degraded sensing, runs, sweeps.

A closed-loop run wires the same plant, sensing, and metric code around
any controller: every control period the truth pose is compared with the
reference, the (possibly absent, possibly noisy) measurement is offered to
the controller, and the applied currents advance the plant.  Feedback
degradation mimics fluoroscopic tracking: readings are emitted at a
configured rate with i.i.d. Gaussian noise, and only the noise consumes
the run's random stream, so two runs differing in controller see identical
noise sequences.

Errors are always computed against the plant truth, never against the
degraded feedback.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .angles import wrap_angle
from .baselines import (
    Baseline1NoKf,
    Baseline5NmpcLut,
    LmpcController,
    PidLutController,
    lookup_nmpc_solver,
)
from .dynamics import Plant, RobotParams, RobotState
from .estimator import SensorReading, default_process_cov, measurement_cov
from .nmpc import NmpcConfig, NmpcSolver, ProposedController
from .system import SystemConfig, build_system

CONTROL_DT = 0.04
# The nominal full-rate feedback (25.5 Hz) and the 40 ms control period are
# consistent to within rounding; full rate means a reading every step.
FULL_RATE_HZ = 25.5

CONTROLLER_NAMES = (
    "proposed",
    "b1_no_kf",
    "b2_pid_lut",
    "b3_lmpc_lut",
    "b4_lmpc_zernike",
    "b5_nmpc_lut",
)

SWEEP_CONTROLLERS = CONTROLLER_NAMES[:5]  # b5 is a timing demonstration

DEFAULT_RATE_VALUES = (3.0, 5.0, 10.0, 15.0, 20.0, 25.5)
DEFAULT_NOISE_VALUES = (0.0, 0.5, 1.0, 2.0, 3.0)
DEFAULT_SEEDS = (0, 1, 2)

SIGMA_THETA_DEG_PER_MM = 2.5  # 5 deg orientation noise at sigma = 2 mm


class ConfigError(ValueError):
    """Experiment configuration references unknown names or bad values."""


# ---------------------------------------------------------------------------
# Reference trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Reference poses sampled at the control period.

    ``geometry`` carries what the metrics need to check corridor clearance
    and what the report needs to draw boundaries; plain data so runs can be
    shipped to worker processes.
    """

    name: str
    dt: float
    poses: np.ndarray  # (n, 3) mm/rad
    geometry: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.poses.shape[0]

    @property
    def duration(self) -> float:
        return (self.n_steps - 1) * self.dt

    def preview(self, k: int, horizon: int) -> np.ndarray:
        idx = np.minimum(np.arange(k, k + horizon + 1), self.n_steps - 1)
        return self.poses[idx]

    def boundary_series(self) -> dict[str, np.ndarray]:
        """Named (n, 2) point series delineating the corridor, if any."""
        if self.geometry.get("kind") != "corridor":
            return {}
        out = {}
        for name in ("anterior", "posterior"):
            r = self.geometry["radius"] + (
                -self.geometry["half_width"] if name == "anterior" else self.geometry["half_width"]
            )
            top = self.geometry["leg_top_y"]
            phis = np.linspace(np.pi, 2 * np.pi, 60)
            arc = np.stack([r * np.cos(phis), r * np.sin(phis)], axis=1)
            left = np.stack([np.full(20, -r), np.linspace(top, 0, 20)], axis=1)
            right = np.stack([np.full(20, r), np.linspace(0, top, 20)], axis=1)
            out[name] = np.vstack([left, arc, right])
        return out


def _segment_pose(kind, data, length, s) -> tuple[float, float, float]:
    """Pose at arclength ``s`` into one (kind, data, length) segment."""
    if kind == "line":
        p0, p1 = np.asarray(data[0], float), np.asarray(data[1], float)
        u = (p1 - p0) / np.linalg.norm(p1 - p0)
        pt = p0 + s * u
        return pt[0], pt[1], math.atan2(u[1], u[0])
    if kind == "arc":
        center, radius, phi0, phi1 = data
        phi = phi0 + (phi1 - phi0) * (s / length)
        x = center[0] + radius * math.cos(phi)
        y = center[1] + radius * math.sin(phi)
        sgn = 1.0 if phi1 > phi0 else -1.0
        return x, y, math.atan2(sgn * math.cos(phi), -sgn * math.sin(phi))
    if kind == "hold":  # station keeping, optionally turning in place
        pose0, dtheta = data
        frac = s / length if length > 0 else 1.0
        return pose0[0], pose0[1], pose0[2] + dtheta * frac
    raise ValueError(f"unknown segment kind {kind!r}")


def _sample_segments(segments, speed: float, dt: float, n: int) -> np.ndarray:
    """Walk a list of (kind, data, length) segments at constant speed."""
    total = sum(seg[2] for seg in segments)
    poses = np.empty((n, 3))
    for i in range(n):
        s = min(speed * i * dt, total)
        for j, (kind, data, length) in enumerate(segments):
            if s <= length or j == len(segments) - 1:
                s = min(s, length)
                break
            s -= length
        x, y, theta = _segment_pose(kind, data, length, s)
        poses[i] = [x, y, wrap_angle(theta)]
    return poses


def s_trajectory(duration: float = 60.0, bounds_mm: float = 43.0, dt: float = CONTROL_DT) -> Trajectory:
    """Constant-speed S curve: two half-turns joined by straights.

    Spans the given square (default 43 x 43 mm, centered on the origin),
    starting at the lower-left corner heading +x, with the desired
    orientation following the path tangent.
    """
    if duration <= 0:
        raise ConfigError("duration must be positive")
    b = bounds_mm / 2.0
    r = b / 2.0
    segments = [
        ("line", ((-b, -b), (r, -b)), b + r),
        ("arc", ((r, -r), r, -np.pi / 2, np.pi / 2), np.pi * r),
        ("line", ((r, 0.0), (-r, 0.0)), 2 * r),
        ("arc", ((-r, r), r, -np.pi / 2, -3 * np.pi / 2), np.pi * r),
        ("line", ((-r, b), (b, b)), b + r),
    ]
    total = sum(s[2] for s in segments)
    n = int(round(duration / dt)) + 1
    poses = _sample_segments(segments, total / duration, dt, n)
    return Trajectory(name="s", dt=dt, poses=poses, geometry={"kind": "s", "bounds_mm": bounds_mm})


def corridor_trajectory(
    dt: float = CONTROL_DT,
    radius: float = 15.0,
    leg_top_y: float = 20.0,
    width: float = 5.0,
    posterior_bias: float = 1.0,
    speed: float = 2.5,
    dwell_s: float = 4.0,
    flip_s: float = 4.0,
    anterior_margin: float = 1.0,
) -> Trajectory:
    """U-shaped corridor task: traverse, dwell, flip in place, return.

    The path runs parallel to the corridor centerline but biased by
    ``posterior_bias`` toward the outer (posterior) wall, keeping extra
    clearance from the inner (anterior) wall.  The corridor is ``width`` mm
    wide around a U of the given radius.
    """
    half_w = width / 2.0
    r_path = radius + posterior_bias
    clearance = half_w + posterior_bias - anterior_margin
    if clearance < 0:
        raise ConfigError("requested clearance infeasible for the corridor width")
    top = leg_top_y
    down = [
        ("line", ((-r_path, top), (-r_path, 0.0)), top),
        ("arc", ((0.0, 0.0), r_path, np.pi, 2 * np.pi), np.pi * r_path),
        ("line", ((r_path, 0.0), (r_path, top)), top),
    ]
    end_pose = (r_path, top, np.pi / 2)
    flipped = wrap_angle(np.pi / 2 + np.pi)
    back = [
        ("line", ((r_path, top), (r_path, 0.0)), top),
        ("arc", ((0.0, 0.0), r_path, 2 * np.pi, np.pi), np.pi * r_path),
        ("line", ((-r_path, 0.0), (-r_path, top)), top),
    ]
    leg_len = sum(s[2] for s in down)
    segments = (
        down
        + [("hold", (end_pose, 0.0), speed * dwell_s)]
        + [("hold", (end_pose, np.pi), speed * flip_s)]
        + back
    )
    total = 2 * leg_len + speed * (dwell_s + flip_s)
    n = int(round(total / speed / dt)) + 1
    poses = _sample_segments(segments, speed, dt, n)
    geometry = {
        "kind": "corridor",
        "radius": radius,
        "half_width": half_w,
        "leg_top_y": top,
        "path_offset": posterior_bias,
    }
    return Trajectory(name="corridor", dt=dt, poses=poses, geometry=geometry)


def corridor_wall_offset(geometry: dict, x: float, y: float) -> float:
    """Signed offset from the corridor centerline (positive = outward)."""
    if y <= 0.0:
        return math.hypot(x, y) - geometry["radius"]
    return abs(x) - geometry["radius"]


def build_trajectory(name: str, duration_s: float | None = None, dt: float = CONTROL_DT) -> Trajectory:
    if name == "s":
        return s_trajectory(duration=duration_s or 60.0, dt=dt)
    if name == "corridor":
        return corridor_trajectory(dt=dt)
    raise ConfigError(f"unknown trajectory {name!r}")


# ---------------------------------------------------------------------------
# Feedback degradation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    """Feedback rate and Gaussian noise mimicking fluoroscopic tracking."""

    rate_hz: float = FULL_RATE_HZ
    sigma_mm: float = 0.0
    sigma_theta_deg: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ConfigError("feedback rate must be positive")
        if self.sigma_mm < 0:
            raise ConfigError("noise sigma must be non-negative")

    @property
    def sigma_theta_rad(self) -> float:
        deg = (
            self.sigma_theta_deg
            if self.sigma_theta_deg is not None
            else SIGMA_THETA_DEG_PER_MM * self.sigma_mm
        )
        return float(np.deg2rad(deg))


class DegradationStream:
    """Emits noisy readings on the ideal schedule of the configured rate.

    A reading is produced whenever a full period has elapsed since the
    previous *scheduled* emission, so the average rate matches the spec
    with at most one control period of jitter.  Noise draws are the only
    consumer of the stream's RNG and do not depend on the truth values.
    """

    def __init__(self, spec: DegradationSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.seed)
        self._next_emit = 0.0
        self.emitted = 0

    def sample(self, t: float, truth_pose) -> SensorReading | None:
        if t + 1e-9 < self._next_emit:
            return None
        self._next_emit += 1.0 / self.spec.rate_hz
        noise = self._rng.normal(0.0, 1.0, size=3)
        p = np.asarray(truth_pose, dtype=float)
        self.emitted += 1
        return SensorReading(
            t=t,
            x=p[0] + self.spec.sigma_mm * noise[0],
            y=p[1] + self.spec.sigma_mm * noise[1],
            theta=float(wrap_angle(p[2] + self.spec.sigma_theta_rad * noise[2])),
        )


def degrade(truth_poses, times, spec: DegradationSpec) -> list[SensorReading | None]:
    """Batch form of :class:`DegradationStream` over a whole truth stream."""
    stream = DegradationStream(spec)
    return [stream.sample(t, p) for t, p in zip(times, truth_poses)]


# ---------------------------------------------------------------------------
# Runs and metrics
# ---------------------------------------------------------------------------


@dataclass
class RunMetrics:
    """Error statistics of one closed-loop run.

    The two wall-time fields are measurements of this machine, not of the
    controlled system; they are written to a separate timing file so the
    deterministic metrics file is byte-reproducible.
    """

    rms_position_mm: float
    rms_orientation_deg: float
    max_position_error_mm: float
    boundary_violations: int
    n_steps: int
    n_measurements: int
    fault: bool
    prediction_rms_mm: float
    prediction_rms_deg: float
    mean_solver_time_ms: float
    achieved_control_rate_hz: float

    METRIC_FIELDS = (
        "rms_position_mm",
        "rms_orientation_deg",
        "max_position_error_mm",
        "boundary_violations",
        "n_steps",
        "n_measurements",
        "fault",
        "prediction_rms_mm",
        "prediction_rms_deg",
    )
    TIMING_FIELDS = ("mean_solver_time_ms", "achieved_control_rate_hz")

    def metric_row(self) -> dict:
        return {k: getattr(self, k) for k in self.METRIC_FIELDS}

    def timing_row(self) -> dict:
        return {k: getattr(self, k) for k in self.TIMING_FIELDS}


@dataclass
class ExperimentConfig:
    """One run: controller, trajectory, degradation, seed, overrides."""

    controller: str = "proposed"
    trajectory: str = "s"
    rate_hz: float = FULL_RATE_HZ
    sigma_mm: float = 0.0
    sigma_theta_deg: float | None = None
    seed: int = 0
    robot: str | None = None  # magnet | capsule; default depends on trajectory
    duration_s: float | None = None
    nmpc: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.controller not in CONTROLLER_NAMES:
            raise ConfigError(
                f"unknown controller {self.controller!r}; choose from {CONTROLLER_NAMES}"
            )
        if self.trajectory not in ("s", "corridor"):
            raise ConfigError(f"unknown trajectory {self.trajectory!r}")

    @property
    def robot_name(self) -> str:
        return self.robot or ("capsule" if self.trajectory == "corridor" else "magnet")

    def degradation(self) -> DegradationSpec:
        return DegradationSpec(
            rate_hz=self.rate_hz,
            sigma_mm=self.sigma_mm,
            sigma_theta_deg=self.sigma_theta_deg,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


def robot_params(name: str, overrides: dict | None = None) -> RobotParams:
    if name == "magnet":
        p = RobotParams.magnet_robot()
    elif name == "capsule":
        p = RobotParams.capsule_robot()
    else:
        raise ConfigError(f"unknown robot {name!r}")
    if overrides:
        p = RobotParams(**{**asdict(p), **overrides})
    return p


def build_controller(name: str, system, params: RobotParams, config: ExperimentConfig):
    nmpc_cfg = NmpcConfig(dt=CONTROL_DT, **config.nmpc)
    spec = config.degradation()
    r_cov = measurement_cov(spec.sigma_mm, spec.sigma_theta_rad)
    if name == "proposed":
        return ProposedController(
            NmpcSolver(system.packed(), params, nmpc_cfg),
            q_cov=default_process_cov(),
            r_cov=r_cov,
        )
    if name == "b1_no_kf":
        return Baseline1NoKf(NmpcSolver(system.packed(), params, nmpc_cfg))
    if name == "b2_pid_lut":
        return PidLutController(system.lookup, params, CONTROL_DT, i_max=nmpc_cfg.i_max)
    if name == "b3_lmpc_lut":
        return LmpcController(system.lookup, params, CONTROL_DT, name="b3_lmpc_lut")
    if name == "b4_lmpc_zernike":
        return LmpcController(system.zernike, params, CONTROL_DT, name="b4_lmpc_zernike")
    if name == "b5_nmpc_lut":
        return Baseline5NmpcLut(
            lookup_nmpc_solver(system.lookup, params, nmpc_cfg),
            q_cov=default_process_cov(),
            r_cov=r_cov,
        )
    raise ConfigError(f"unknown controller {name!r}")


LOG_FIELDS = (
    ["t", "truth_x", "truth_y", "truth_theta", "truth_vx", "truth_vy", "truth_omega"]
    + ["target_x", "target_y", "target_theta"]
    + ["meas_fresh", "meas_x", "meas_y", "meas_theta"]
    + ["est_x", "est_y", "est_theta", "est_source"]
    + ["pred_x", "pred_y", "pred_theta"]
    + [f"current_{i}" for i in range(8)]
    + ["solver_iterations", "solver_time_ms"]
)


def run_closed_loop(config: ExperimentConfig, system=None) -> tuple[RunMetrics, list[dict]]:
    """Execute one sense -> estimate -> control -> actuate experiment.

    Returns the metrics and the full per-step log.  Deterministic for a
    fixed config and seed (wall-time fields aside).
    """
    system = system or build_system()
    traj = build_trajectory(config.trajectory, config.duration_s)
    params = robot_params(config.robot_name, config.params)
    controller = build_controller(config.controller, system, params, config)
    horizon = getattr(getattr(controller, "controller", None), "solver", None)
    horizon = horizon.config.horizon if horizon is not None else NmpcConfig().horizon

    start = traj.poses[0]
    plant = Plant(system.plant_lookup, params, RobotState(x=start[0], y=start[1], theta=start[2]))
    stream = DegradationStream(config.degradation())
    controller.reset(start, 0.0)

    rows: list[dict] = []
    pos_err = np.empty(traj.n_steps)
    ang_err = np.empty(traj.n_steps)
    anterior_violations = 0
    solver_times: list[float] = []
    fault = False

    corridor = traj.geometry if traj.geometry.get("kind") == "corridor" else None
    for k in range(traj.n_steps):
        t = k * traj.dt
        truth = plant.state
        target = traj.poses[k]
        pos_err[k] = math.hypot(truth.x - target[0], truth.y - target[1])
        ang_err[k] = wrap_angle(truth.theta - target[2])
        if corridor is not None:
            offset = corridor_wall_offset(corridor, truth.x, truth.y)
            if offset < -(corridor["half_width"] - 1e-12):
                anterior_violations += 1
        meas = stream.sample(t, truth.pose())
        try:
            res = controller.step(t, meas, traj.preview(k, horizon))
            plant.advance(res.currents, traj.dt)
        except Exception:
            fault = True
            pos_err = pos_err[: k + 1]
            ang_err = ang_err[: k + 1]
            break
        solver_times.append(res.solver_time_s)
        row = {
            "t": t,
            "truth_x": truth.x,
            "truth_y": truth.y,
            "truth_theta": truth.theta,
            "truth_vx": truth.vx,
            "truth_vy": truth.vy,
            "truth_omega": truth.omega,
            "target_x": target[0],
            "target_y": target[1],
            "target_theta": target[2],
            "meas_fresh": int(meas is not None),
            "meas_x": meas.x if meas else "",
            "meas_y": meas.y if meas else "",
            "meas_theta": meas.theta if meas else "",
            "est_x": res.est_pose[0],
            "est_y": res.est_pose[1],
            "est_theta": res.est_pose[2],
            "est_source": res.est_source,
            "pred_x": res.predicted_pose[0],
            "pred_y": res.predicted_pose[1],
            "pred_theta": res.predicted_pose[2],
            "solver_iterations": res.solver_iterations,
            "solver_time_ms": res.solver_time_s * 1e3,
        }
        for i, c in enumerate(res.currents):
            row[f"current_{i}"] = c
        rows.append(row)

    pred_rms_mm, pred_rms_deg = prediction_rms(rows)
    total_time = sum(solver_times)
    metrics = RunMetrics(
        rms_position_mm=float(np.sqrt(np.mean(pos_err**2))),
        rms_orientation_deg=float(np.rad2deg(np.sqrt(np.mean(ang_err**2)))),
        max_position_error_mm=float(pos_err.max()),
        boundary_violations=int(anterior_violations + plant.wall_contacts),
        n_steps=len(rows),
        n_measurements=stream.emitted,
        fault=fault,
        prediction_rms_mm=pred_rms_mm,
        prediction_rms_deg=pred_rms_deg,
        mean_solver_time_ms=float(np.mean(solver_times) * 1e3) if solver_times else 0.0,
        achieved_control_rate_hz=(len(rows) / total_time) if total_time > 0 else float("inf"),
    )
    return metrics, rows


def prediction_rms(rows: list[dict]) -> tuple[float, float]:
    """RMS of (controller's predicted pose at k) vs (truth at k+1)."""
    if len(rows) < 2:
        return float("nan"), float("nan")
    dp = []
    da = []
    for prev, cur in zip(rows[:-1], rows[1:]):
        dp.append(
            (prev["pred_x"] - cur["truth_x"]) ** 2 + (prev["pred_y"] - cur["truth_y"]) ** 2
        )
        da.append(float(wrap_angle(prev["pred_theta"] - cur["truth_theta"])) ** 2)
    return float(np.sqrt(np.mean(dp))), float(np.rad2deg(np.sqrt(np.mean(da))))


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_csv(path, rows: list[dict], fieldnames=None) -> None:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_run_outputs(out_dir, config: ExperimentConfig, metrics: RunMetrics, rows) -> None:
    """metrics.csv (deterministic), timing.csv (wall times), trajectory_log.csv."""
    out = Path(out_dir)
    ident = {
        "controller": config.controller,
        "trajectory": config.trajectory,
        "rate_hz": config.rate_hz,
        "sigma_mm": config.sigma_mm,
        "seed": config.seed,
    }
    write_csv(out / "metrics.csv", [{**ident, **metrics.metric_row()}])
    write_csv(out / "timing.csv", [{**ident, **metrics.timing_row()}])
    write_csv(out / "trajectory_log.csv", rows, fieldnames=LOG_FIELDS)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

_WORKER_SYSTEM = None


def _sweep_worker_init(system_cfg):
    global _WORKER_SYSTEM
    _WORKER_SYSTEM = build_system(system_cfg)


def _sweep_run_one(args):
    cfg_dict, axis, value = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    metrics, _ = run_closed_loop(cfg, system=_WORKER_SYSTEM or build_system())
    return {
        "controller": cfg.controller,
        "axis": axis,
        "value": value,
        "rate_hz": cfg.rate_hz,
        "sigma_mm": cfg.sigma_mm,
        "seed": cfg.seed,
        **metrics.metric_row(),
        **metrics.timing_row(),
    }


def sweep_conditions(axis: str, values, base: ExperimentConfig):
    """The (config, axis, value) grid one sweep axis expands to."""
    if axis == "rate":
        for v in values:
            yield ExperimentConfig(**{**base.to_dict(), "rate_hz": float(v)}), axis, float(v)
    elif axis == "noise":
        for v in values:
            yield ExperimentConfig(**{**base.to_dict(), "sigma_mm": float(v)}), axis, float(v)
    elif axis == "rate_at_fixed_noise":
        for v in values:
            yield (
                ExperimentConfig(**{**base.to_dict(), "rate_hz": float(v), "sigma_mm": 2.0}),
                axis,
                float(v),
            )
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")


def sweep(
    axis: str,
    values=None,
    controllers=SWEEP_CONTROLLERS,
    seeds=DEFAULT_SEEDS,
    base: ExperimentConfig | None = None,
    workers: int = 1,
    system_cfg: SystemConfig | None = None,
) -> list[dict]:
    """Cartesian product of controllers x values x seeds, one run each.

    Faulted runs are recorded with their partial metrics and the sweep
    continues.  Rows come back sorted, so worker count never changes the
    output.
    """
    if values is None:
        values = DEFAULT_NOISE_VALUES if axis == "noise" else DEFAULT_RATE_VALUES
    base = base or ExperimentConfig()
    tasks = []
    for name in controllers:
        if name not in CONTROLLER_NAMES:
            raise ConfigError(f"unknown controller {name!r}")
        for cfg, ax, value in sweep_conditions(axis, values, base):
            for seed in seeds:
                run_cfg = ExperimentConfig(**{**cfg.to_dict(), "controller": name, "seed": int(seed)})
                tasks.append((run_cfg.to_dict(), ax, value))

    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_sweep_worker_init, initargs=(system_cfg,)
        ) as ex:
            rows = list(ex.map(_sweep_run_one, tasks))
    else:
        _sweep_worker_init(system_cfg)
        rows = [_sweep_run_one(task) for task in tasks]
    rows.sort(key=lambda r: (r["controller"], r["value"], r["seed"]))
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Per-(controller, value) mean/std of the headline error metrics."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["controller"], r["axis"], r["value"]), []).append(r)
    out = []
    for (controller, axis, value), rs in sorted(groups.items()):
        pos = np.array([float(r["rms_position_mm"]) for r in rs])
        ang = np.array([float(r["rms_orientation_deg"]) for r in rs])
        out.append(
            {
                "controller": controller,
                "axis": axis,
                "value": value,
                "n_seeds": len(rs),
                "mean_rms_position_mm": float(pos.mean()),
                "std_rms_position_mm": float(pos.std(ddof=0)),
                "mean_rms_orientation_deg": float(ang.mean()),
                "std_rms_orientation_deg": float(ang.std(ddof=0)),
            }
        )
    return out


def report(rows: list[dict], out_dir, log_rows=None, trajectory: Trajectory | None = None) -> list[Path]:
    """Figure-analog data files from a sweep table (plus optional overlay).

    Emits per-axis error curves and, when a run log and its trajectory are
    supplied, an overlay file with desired/actual/boundary point series.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    summary = summarize(rows)
    write_csv(out / "summary.csv", summary)
    written.append(out / "summary.csv")
    axis_files = {
        "rate": "figure_error_vs_rate.csv",
        "noise": "figure_error_vs_noise.csv",
        "rate_at_fixed_noise": "figure_error_vs_rate_sigma2.csv",
    }
    for axis, fname in axis_files.items():
        sub = [r for r in summary if r["axis"] == axis]
        if sub:
            write_csv(out / fname, sub)
            written.append(out / fname)
    if log_rows is not None and trajectory is not None:
        overlay = []
        for i, r in enumerate(log_rows):
            overlay.append({"series": "desired", "idx": i, "x": r["target_x"], "y": r["target_y"]})
            overlay.append({"series": "actual", "idx": i, "x": r["truth_x"], "y": r["truth_y"]})
        for name, pts in trajectory.boundary_series().items():
            for i, p in enumerate(pts):
                overlay.append({"series": name, "idx": i, "x": p[0], "y": p[1]})
        write_csv(out / "figure_overlay.csv", overlay)
        written.append(out / "figure_overlay.csv")
    return written
