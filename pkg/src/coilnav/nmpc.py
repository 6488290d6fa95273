"""Receding-horizon controller that outputs coil currents directly.

Single-shooting transcription: the decision variables are the horizon's
current vectors; states are recovered by RK4 rollout through the field
model, and the exact gradient of the loss with respect to every current
comes from reverse accumulation through the rollout (see ``_kernels``).
The loss is minimized by projected spectral gradient descent with a
monotone line search; box and rate limits are enforced by projection, the
workspace box by a smooth hinge penalty.

The loss weights live in scaled units (mm for position error, rad for
orientation, A for currents).  Default tuning keeps ||Q_p|| : ||R|| : ||S||
at 10 : 1 : 0.5.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import make_engine
from .angles import wrap_angle
from .dynamics import MM, N_COILS, RobotParams, RobotState
from .field_oracle import OutOfBoundsError
from .estimator import (
    PoseEstimate,
    SensorReading,
    default_process_cov,
    kf_step,
    measurement_cov,
)


class SolverFaultError(RuntimeError):
    """No usable (finite, sane) objective at the initial iterate."""


# Losses beyond this are treated as divergence: workspace-bounded errors
# keep legitimate losses many orders of magnitude below it.
LOSS_CEILING = 1e12


def angle_error(theta: float, theta_desired: float) -> float:
    """Orientation error wrapped to (-pi, pi], free of 2*pi jumps."""
    return float(wrap_angle(theta - theta_desired))


@dataclass
class NmpcConfig:
    """Horizon, weights, constraints, and solver budget.

    ``q_p``/``p`` are 2x2 position-error weights (per mm^2); ``r``/``s``
    per-coil current and current-rate weights (per A^2).  ``deadline_s``
    optionally caps wall time per solve; it is off by default so repeated
    runs are bit-reproducible.
    """

    horizon: int = 20
    dt: float = 0.04
    q_p: np.ndarray = None
    q_theta: float = 8.0
    r: np.ndarray = None
    s: np.ndarray = None
    p: np.ndarray = None
    q_theta_n: float = None
    i_max: float = 30.0
    di_max: float = 5.0
    workspace_box: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    ws_weight: float = 50.0
    # Field-anchor regularization: the solver keeps B(robot) near
    # field_ref_T along the body axis, which fixes the attitude pendulum's
    # stiffness at a well-damped level and rules out the anti-aligned
    # (unstable) torque branch.  Forces come from the gradients.
    align_weight: float = 1.0e10  # per T^2
    field_ref_T: float = 4.0e-5
    max_iterations: int = 50
    pg_tol: float = 1e-3
    deadline_s: float | None = None
    n_coils: int = N_COILS

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("need horizon >= 1 and dt > 0")
        if self.q_p is None:
            self.q_p = 10.0 * np.eye(2)
        self.q_p = np.asarray(self.q_p, dtype=float)
        if self.r is None:
            self.r = np.ones(self.n_coils)
        self.r = np.asarray(self.r, dtype=float)
        if self.s is None:
            self.s = 0.5 * np.ones(self.n_coils)
        self.s = np.asarray(self.s, dtype=float)
        if self.p is None:
            self.p = 5.0 * self.q_p
        self.p = np.asarray(self.p, dtype=float)
        if self.q_theta_n is None:
            self.q_theta_n = 5.0 * self.q_theta
        for w, name in ((self.q_p, "q_p"), (self.p, "p")):
            if np.any(np.linalg.eigvalsh(w) < -1e-12):
                raise ValueError(f"{name} must be positive semi-definite")
        if self.q_theta < 0 or self.q_theta_n < 0 or np.any(self.r < 0) or np.any(self.s < 0):
            raise ValueError("weights must be non-negative")

    def kernel_weights(self) -> np.ndarray:
        b = self.workspace_box
        return np.array(
            [
                self.q_p[0, 0],
                self.q_p[0, 1],
                self.q_p[1, 1],
                self.q_theta,
                self.p[0, 0],
                self.p[0, 1],
                self.p[1, 1],
                self.q_theta_n,
                self.ws_weight,
                b[0],
                b[1],
                b[2],
                b[3],
                self.align_weight,
                self.field_ref_T,
            ]
        )


@dataclass
class NmpcSolution:
    """Solver output: feasible current plan plus its predicted rollout."""

    currents: np.ndarray  # (N, n_coils)
    states: np.ndarray  # (N+1, 6) SI
    loss: float
    status: str  # converged | budget | stalled
    iterations: int
    wall_time_s: float

    @property
    def predicted_pose_mm(self) -> np.ndarray:
        s = self.states[1]
        return np.array([s[0] / MM, s[1] / MM, s[2]])


def stage_cost(pose_mm, currents, prev_currents, target_mm, config: NmpcConfig) -> float:
    """Paper stage cost: tracking + current magnitude + current rate terms."""
    e = np.asarray(pose_mm, dtype=float)[:2] - np.asarray(target_mm, dtype=float)[:2]
    eth = angle_error(pose_mm[2], target_mm[2])
    I = np.asarray(currents, dtype=float)
    dI = I - np.asarray(prev_currents, dtype=float)
    return float(
        e @ config.q_p @ e
        + config.q_theta * eth**2
        + I @ (config.r * I)
        + dI @ (config.s * dI)
    )


def terminal_cost(pose_mm, target_mm, config: NmpcConfig) -> float:
    e = np.asarray(pose_mm, dtype=float)[:2] - np.asarray(target_mm, dtype=float)[:2]
    eth = angle_error(pose_mm[2], target_mm[2])
    return float(e @ config.p @ e + config.q_theta_n * eth**2)


def total_loss(trajectory_mm, currents, targets_mm, config: NmpcConfig, prev_currents=None) -> float:
    """Terminal cost plus summed stage costs over a given trajectory.

    ``trajectory_mm`` holds N+1 poses (x, y, theta) in mm/rad; ``currents``
    the N applied current vectors.  Used as the independent reference for
    the rollout engines' internal loss.
    """
    traj = np.asarray(trajectory_mm, dtype=float)
    I = np.atleast_2d(np.asarray(currents, dtype=float))
    targets = np.asarray(targets_mm, dtype=float)
    n = I.shape[0]
    if traj.shape[0] != n + 1 or targets.shape[0] != n + 1:
        raise ValueError("need N+1 poses and targets for N currents")
    prev = np.zeros(I.shape[1]) if prev_currents is None else np.asarray(prev_currents)
    loss = 0.0
    for k in range(n):
        loss += stage_cost(traj[k], I[k], I[k - 1] if k else prev, targets[k], config)
    return loss + terminal_cost(traj[n], targets[n], config)


def project_currents(seq: np.ndarray, prev: np.ndarray, i_max: float, di_max: float) -> np.ndarray:
    """Clamp a current plan onto the box and rate constraint set.

    Sequential forward pass: each step is clipped to the box intersected
    with the rate window around the (already clipped) previous step.  The
    result is always feasible and the operator is idempotent.
    """
    out = np.empty_like(seq)
    last = prev
    for k in range(seq.shape[0]):
        lo = np.maximum(-i_max, last - di_max)
        hi = np.minimum(i_max, last + di_max)
        out[k] = np.clip(seq[k], lo, hi)
        last = out[k]
    return out


def as_target_sequence(target, horizon: int) -> np.ndarray:
    """Normalize a target pose or preview into an (N+1, 3) SI array."""
    t = np.asarray(target, dtype=float)
    if t.ndim == 1:
        t = np.tile(t[:3], (horizon + 1, 1))
    elif t.shape[0] != horizon + 1:
        raise ValueError(f"target preview must have horizon+1={horizon + 1} rows")
    out = t[:, :3].copy()
    out[:, 0] *= MM
    out[:, 1] *= MM
    return out


class NmpcSolver:
    """Binds a field model, robot parameters, and config to the solve loop."""

    def __init__(self, field, params: RobotParams, config: NmpcConfig, backend: str = "auto"):
        self.engine = make_engine(field, backend)
        self.params = params
        self.config = config
        self._params_arr = params.to_kernel()
        self._weights = config.kernel_weights()

    def _current_terms(self, seq: np.ndarray, prev: np.ndarray) -> float:
        cfg = self.config
        d = np.diff(np.vstack([prev, seq]), axis=0)
        return float(np.sum(seq * cfg.r * seq) + np.sum(d * cfg.s * d))

    def _current_terms_grad(self, seq: np.ndarray, prev: np.ndarray) -> np.ndarray:
        cfg = self.config
        d = np.diff(np.vstack([prev, seq]), axis=0)
        g = 2.0 * cfg.r * seq + 2.0 * cfg.s * d
        g[:-1] -= 2.0 * cfg.s * d[1:]
        return g

    def objective(self, state_si, seq, targets_si, prev) -> float:
        """Loss of a candidate plan; +inf when the rollout leaves the
        field model's domain or overflows."""
        try:
            tl, _ = self.engine.tracking_loss(
                self._params_arr, state_si, seq, self.config.dt, targets_si, self._weights
            )
        except OutOfBoundsError:
            return float("inf")
        val = tl + self._current_terms(seq, prev)
        return val if val < LOSS_CEILING else float("inf")

    def objective_grad(self, state_si, seq, targets_si, prev):
        try:
            tl, grad, states = self.engine.tracking_loss_grad(
                self._params_arr, state_si, seq, self.config.dt, targets_si, self._weights
            )
        except OutOfBoundsError:
            return float("inf"), np.zeros_like(seq), None
        val = tl + self._current_terms(seq, prev)
        if not val < LOSS_CEILING:
            return float("inf"), np.zeros_like(seq), None
        return val, grad + self._current_terms_grad(seq, prev), states

    def solve(
        self,
        state: RobotState,
        target,
        warm_start: NmpcSolution | None = None,
        prev_applied=None,
    ) -> NmpcSolution:
        """Minimize the receding-horizon loss from ``state`` toward ``target``.

        ``target`` is a single pose (x mm, y mm, theta rad) or an (N+1, 3)
        preview of the reference over the horizon.  Returns the best
        feasible iterate found; the loss never exceeds the better of the
        zero-current and warm-start candidates.
        """
        t0 = time.perf_counter()
        cfg = self.config
        s0 = state.to_si()
        targets = as_target_sequence(target, cfg.horizon)
        prev = np.zeros(cfg.n_coils) if prev_applied is None else np.asarray(prev_applied, float)

        def proj(seq):
            return project_currents(seq, prev, cfg.i_max, cfg.di_max)

        candidates = [proj(np.zeros((cfg.horizon, cfg.n_coils)))]
        if warm_start is not None:
            shifted = np.vstack([warm_start.currents[1:], warm_start.currents[-1:]])
            candidates.append(proj(shifted))
        losses = [self.objective(s0, c, targets, prev) for c in candidates]
        if not any(np.isfinite(losses)):
            raise SolverFaultError(f"no finite loss among initial candidates: {losses}")
        pick = int(np.argmin(losses))
        x = candidates[pick]

        f, g, states = self.objective_grad(s0, x, targets, prev)
        if states is None:
            raise SolverFaultError("initial candidate lost finiteness under gradient rollout")
        best = (f, x, states)
        status = "budget"
        iterations = 0
        gmax = np.abs(g).max()
        alpha = cfg.di_max / gmax if gmax > 0 else 1.0

        def decreased(f_cand: float) -> bool:
            return np.isfinite(f_cand) and f_cand <= f - 1e-14 * abs(f)

        for it in range(1, cfg.max_iterations + 1):
            iterations = it
            cand = proj(x - alpha * g)
            f_cand = self.objective(s0, cand, targets, prev)
            backtracks = 0
            while not decreased(f_cand) and backtracks < 25:
                alpha *= 0.5
                cand = proj(x - alpha * g)
                f_cand = self.objective(s0, cand, targets, prev)
                backtracks += 1
            step = cand - x
            if not decreased(f_cand):
                status = "stalled"
                break
            f_new, g_new, states_new = self.objective_grad(s0, cand, targets, prev)
            if states_new is None:
                status = "stalled"
                break
            if f_new < best[0] or (f_new == best[0] and np.linalg.norm(cand) < np.linalg.norm(best[1])):
                best = (f_new, cand, states_new)
            y = g_new - g
            sy = float(np.sum(step * y))
            ss = float(np.sum(step * step))
            alpha = min(max(ss / sy, 1e-8), 1e8) if sy > 1e-30 else alpha * 2.0
            x, f, g = cand, f_new, g_new
            if np.abs(step).max() <= cfg.pg_tol * (1.0 + np.abs(x).max()):
                status = "converged"
                break
            if cfg.deadline_s is not None and time.perf_counter() - t0 > cfg.deadline_s:
                status = "budget"
                break
        return NmpcSolution(
            currents=best[1],
            states=best[2],
            loss=best[0],
            status=status,
            iterations=iterations,
            wall_time_s=time.perf_counter() - t0,
        )


@dataclass
class NmpcController:
    """Warm-start and previous-current bookkeeping around the solver.

    Each control step solves from the current state estimate, applies the
    first current vector, and stores the one-step-ahead pose prediction for
    the estimator's next cycle.
    """

    solver: NmpcSolver
    warm: NmpcSolution | None = None
    prev_currents: np.ndarray = None
    last_solution: NmpcSolution | None = field(default=None, repr=False)
    faults: int = 0

    def __post_init__(self):
        if self.prev_currents is None:
            self.prev_currents = np.zeros(self.solver.config.n_coils)

    def reset(self):
        self.warm = None
        self.prev_currents = np.zeros(self.solver.config.n_coils)
        self.last_solution = None
        self.faults = 0

    def control_step(self, state: RobotState, target) -> tuple[np.ndarray, np.ndarray]:
        """Apply one receding-horizon step.

        Returns the applied currents and the predicted next pose (mm, rad).
        On a solver fault the safe action is zero current and the
        prediction falls back to a zero-current rollout.
        """
        try:
            sol = self.solver.solve(
                state, target, warm_start=self.warm, prev_applied=self.prev_currents
            )
        except SolverFaultError:
            self.faults += 1
            self.warm = None
            zeros = np.zeros(self.solver.config.n_coils)
            nxt = self.solver.engine.rk4_step(
                self.solver._params_arr, state.to_si(), zeros, self.solver.config.dt
            )
            self.prev_currents = zeros
            self.last_solution = None
            return zeros, np.array([nxt[0] / MM, nxt[1] / MM, nxt[2]])
        self.warm = sol
        self.prev_currents = sol.currents[0].copy()
        self.last_solution = sol
        return sol.currents[0].copy(), sol.predicted_pose_mm


@dataclass
class StepResult:
    """What one feedback-controller step produced, for logging."""

    currents: np.ndarray
    est_pose: np.ndarray  # (3,) mm/rad, the pose the controller acted on
    est_source: str
    predicted_pose: np.ndarray  # (3,) controller's prediction for the next step
    solver_iterations: int = 0
    solver_time_s: float = 0.0


class ProposedController:
    """The full proposed pipeline: Kalman-fused pose + current-space NMPC.

    Every cycle the filter fuses the previous cycle's pose prediction with
    the measurement (when one arrived); the NMPC maps the resulting state
    and the reference preview to the applied currents, and its one-step
    state prediction is stored for the next cycle.

    Rates: velocities are taken from the stored model prediction rather
    than by differencing consecutive fused poses.  During measurement gaps
    the two are identical (the fused pose IS the prediction); at a
    measurement, differencing would turn the whole accumulated correction
    into a single-step velocity spike, which the controller then fights,
    destabilizing the loop at low feedback rates.  Velocity errors decay
    through drag, so the model rates are self-correcting.
    """

    name = "proposed"

    def __init__(self, solver: NmpcSolver, q_cov=None, r_cov=None):
        self.controller = NmpcController(solver)
        self.dt = solver.config.dt
        self.q_cov = default_process_cov() if q_cov is None else np.asarray(q_cov, float)
        self.r_cov = measurement_cov(0.0, 0.0) if r_cov is None else np.asarray(r_cov, float)
        self._est: PoseEstimate | None = None
        self._predicted: np.ndarray | None = None
        self._pred_rates: np.ndarray | None = None

    def reset(self, start_pose, t0: float = 0.0):
        self.controller.reset()
        p = np.asarray(start_pose, dtype=float)[:3]
        self._est = PoseEstimate(pose=p.copy(), covariance=self.q_cov.copy(), source="fused")
        self._predicted = p.copy()
        self._pred_rates = np.zeros(3)

    def _estimate(self, measurement: SensorReading | None) -> PoseEstimate:
        return kf_step(self._est, self._predicted, measurement, self.q_cov, self.r_cov)

    def step(self, t: float, measurement: SensorReading | None, target_preview) -> StepResult:
        est = self._estimate(measurement)
        state = RobotState(
            x=est.pose[0],
            y=est.pose[1],
            theta=est.pose[2],
            vx=self._pred_rates[0],
            vy=self._pred_rates[1],
            omega=self._pred_rates[2],
        )
        currents, predicted = self.controller.control_step(state, target_preview)
        self._est = est
        self._predicted = predicted
        sol = self.controller.last_solution
        if sol is not None:
            s1 = sol.states[1]
            self._pred_rates = np.array([s1[3] / MM, s1[4] / MM, s1[5]])
        else:
            self._pred_rates = np.zeros(3)
        return StepResult(
            currents=currents,
            est_pose=est.pose.copy(),
            est_source=est.source,
            predicted_pose=predicted,
            solver_iterations=sol.iterations if sol else 0,
            solver_time_s=sol.wall_time_s if sol else 0.0,
        )
