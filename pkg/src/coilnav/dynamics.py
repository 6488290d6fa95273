"""Planar rigid-body robot dynamics and the ground-truth plant simulator.

The robot is a magnetic dipole in a viscous fluid: translational drag is
anisotropic (easier along the body axis), rotational drag is linear in the
spin rate, and the magnetic wrench couples the coil currents to the motion
through the field model.  Externally everything speaks millimeters; the
computations run in SI and convert at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .angles import rot2, wrap_angle

N_COILS = 8
I_MAX_A = 30.0

MM = 1e-3


class IntegrationBlowupError(RuntimeError):
    """Integrator produced a non-finite state; carries the offending state."""

    def __init__(self, message: str, state):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class RobotState:
    """Pose and rates: positions in mm, angles in rad, rates per second."""

    x: float
    y: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.theta, self.vx, self.vy, self.omega)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite robot state {vals}")
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def to_si(self) -> np.ndarray:
        return np.array(
            [self.x * MM, self.y * MM, self.theta, self.vx * MM, self.vy * MM, self.omega]
        )

    @classmethod
    def from_si(cls, s) -> "RobotState":
        return cls(
            x=s[0] / MM, y=s[1] / MM, theta=s[2], vx=s[3] / MM, vy=s[4] / MM, omega=s[5]
        )


@dataclass(frozen=True)
class RobotParams:
    """Physical robot parameters (SI).

    The drag coefficients follow slender-body Stokes drag for a cylinder of
    the robot's dimensions in the working fluid; they are engineering
    estimates, not measured values, and are meant to be overridden from
    experiment configs when better numbers exist.
    """

    mass: float
    inertia: float
    moment: float
    moment_axis: tuple[float, float] = (1.0, 0.0)
    d_par: float = 3.5e-4
    d_perp: float = 7.0e-4
    d_r: float = 1.45e-8

    def __post_init__(self):
        if min(self.mass, self.inertia, self.moment, self.d_par, self.d_perp, self.d_r) <= 0:
            raise ValueError("all physical parameters must be strictly positive")
        if self.d_perp < self.d_par:
            raise ValueError("slender body requires d_perp >= d_par")
        ax = np.asarray(self.moment_axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0:
            raise ValueError("moment axis must be a nonzero vector")
        object.__setattr__(self, "moment_axis", (float(ax[0] / n), float(ax[1] / n)))

    @classmethod
    def magnet_robot(cls) -> "RobotParams":
        """Cylindrical magnet robot, 16 x 2.8 mm, in 50% glycerin-water."""
        mass = 1.2e-4
        length, radius = 0.016, 0.0014
        inertia = mass * (length**2 / 12.0 + radius**2 / 4.0)
        mu = 6.0e-3  # Pa s
        log_term = np.log(2 * length / (2 * radius))
        d_par = 2 * np.pi * mu * length / (log_term - 0.72)
        return cls(
            mass=mass,
            inertia=inertia,
            moment=1.35e-3,
            d_par=d_par,
            d_perp=2.0 * d_par,
            d_r=np.pi * mu * length**3 / (3.0 * (log_term - 0.66)),
        )

    @classmethod
    def capsule_robot(cls) -> "RobotParams":
        """Drug-delivery capsule, 7.4 x 2.8 mm, in CSF-like 10% glycerin."""
        mass = 5.5e-5
        length, radius = 0.0074, 0.0014
        inertia = mass * (length**2 / 12.0 + radius**2 / 4.0)
        mu = 1.3e-3
        log_term = np.log(2 * length / (2 * radius))
        d_par = 2 * np.pi * mu * length / (log_term - 0.72)
        return cls(
            mass=mass,
            inertia=inertia,
            moment=8.9e-4,
            d_par=d_par,
            d_perp=2.0 * d_par,
            d_r=np.pi * mu * length**3 / (3.0 * (log_term - 0.66)),
        )

    def moment_world(self, theta: float) -> np.ndarray:
        return self.moment * (rot2(theta) @ np.asarray(self.moment_axis))

    def to_kernel(self) -> np.ndarray:
        return np.array(
            [
                self.mass,
                self.inertia,
                self.moment,
                self.moment_axis[0],
                self.moment_axis[1],
                self.d_par,
                self.d_perp,
                self.d_r,
            ]
        )


def validate_currents(currents, i_max: float = I_MAX_A) -> np.ndarray:
    I = np.asarray(currents, dtype=float)
    if np.abs(I).max(initial=0.0) > i_max + 1e-9:
        raise ValueError(f"coil current exceeds the {i_max} A limit")
    return I


def magnetic_wrench(params: RobotParams, theta: float, B, gradB) -> tuple[np.ndarray, float]:
    """Force (N) and torque (N m) on the dipole.

    F_j = m . dB/dx_j (gradient pulls the dipole), tau = m x B in the
    plane.  Pure algebra on the supplied field and gradient.
    """
    mw = params.moment_world(theta)
    G = np.asarray(gradB, dtype=float)
    F = G.T @ mw
    B = np.asarray(B, dtype=float)
    tau = mw[0] * B[1] - mw[1] * B[0]
    return F, float(tau)


def drag_matrix(theta: float, params: RobotParams) -> np.ndarray:
    """World-frame translational drag matrix R(theta) diag(d_par, d_perp) R^T."""
    R = rot2(theta)
    return R @ np.diag([params.d_par, params.d_perp]) @ R.T


def state_derivative(state: RobotState, currents, field_model, params: RobotParams) -> np.ndarray:
    """Time derivative of the state, in external units (mm, s).

    The field model is queried at the state's position even slightly
    outside the workspace (the plant clamps separately); callers that care
    should check bounds themselves.
    """
    I = np.asarray(currents, dtype=float)
    p_mm = (state.x, state.y)
    B = field_model.eval_field(p_mm, I)
    G = field_model.eval_gradient(p_mm, I)
    F, tau = magnetic_wrench(params, state.theta, B, G)
    D = drag_matrix(state.theta, params)
    v_si = np.array([state.vx, state.vy]) * MM
    acc = (F - D @ v_si) / params.mass
    alpha = (tau - params.d_r * state.omega) / params.inertia
    return np.array([state.vx, state.vy, state.omega, acc[0] / MM, acc[1] / MM, alpha])


def _derivative_si(s: np.ndarray, I, field_model, params: RobotParams) -> np.ndarray:
    p_mm = (s[0] / MM, s[1] / MM)
    B = field_model.eval_field(p_mm, I)
    G = field_model.eval_gradient(p_mm, I)
    F, tau = magnetic_wrench(params, s[2], B, G)
    D = drag_matrix(s[2], params)
    acc = (F - D @ s[3:5]) / params.mass
    return np.array([s[3], s[4], s[5], acc[0], acc[1], (tau - params.d_r * s[5]) / params.inertia])


def integrate_step(
    state: RobotState, currents, dt: float, field_model, params: RobotParams
) -> RobotState:
    """One classical RK4 step; theta re-wrapped, deterministic."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    I = np.asarray(currents, dtype=float)
    s = state.to_si()
    k1 = _derivative_si(s, I, field_model, params)
    k2 = _derivative_si(s + 0.5 * dt * k1, I, field_model, params)
    k3 = _derivative_si(s + 0.5 * dt * k2, I, field_model, params)
    k4 = _derivative_si(s + dt * k3, I, field_model, params)
    out = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationBlowupError("integration produced a non-finite state", out)
    out[2] = wrap_angle(out[2])
    return RobotState.from_si(out)


class Plant:
    """Owns the simulation truth state; one instance per run thread.

    Advances by RK4 sub-steps and clamps the position to the workspace
    walls (inelastic contact: the wall-normal velocity is zeroed).  With
    process noise disabled (the default) trajectories are bit-deterministic
    for fixed inputs.
    """

    def __init__(
        self,
        field_model,
        params: RobotParams,
        state0: RobotState,
        substeps: int = 4,
        bounds_mm: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0),
        process_noise_mm: float = 0.0,
        seed: int = 0,
    ):
        self.field_model = field_model
        self.params = params
        self._state = state0
        self.substeps = int(substeps)
        self.bounds = bounds_mm
        self.process_noise_mm = process_noise_mm
        self._rng = np.random.default_rng(seed) if process_noise_mm > 0 else None
        self.wall_contacts = 0

    @property
    def state(self) -> RobotState:
        return self._state

    def _clamp(self, st: RobotState) -> RobotState:
        xmin, xmax, ymin, ymax = self.bounds
        x, y, vx, vy = st.x, st.y, st.vx, st.vy
        hit = False
        if x < xmin or x > xmax:
            x = min(max(x, xmin), xmax)
            vx = 0.0
            hit = True
        if y < ymin or y > ymax:
            y = min(max(y, ymin), ymax)
            vy = 0.0
            hit = True
        if hit:
            self.wall_contacts += 1
            return replace(st, x=x, y=y, vx=vx, vy=vy)
        return st

    def advance(self, currents, dt: float) -> RobotState:
        I = validate_currents(currents)
        sub_dt = dt / self.substeps
        st = self._state
        for _ in range(self.substeps):
            st = integrate_step(st, I, sub_dt, self.field_model, self.params)
            st = self._clamp(st)
        if self._rng is not None:
            st = replace(
                st,
                x=st.x + self._rng.normal(0, self.process_noise_mm),
                y=st.y + self._rng.normal(0, self.process_noise_mm),
            )
            st = self._clamp(st)
        self._state = st
        return st


def plant_advance(plant: Plant, currents, dt_sim: float) -> RobotState:
    """Functional alias for :meth:`Plant.advance`."""
    return plant.advance(currents, dt_sim)
