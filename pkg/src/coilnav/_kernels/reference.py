"""Pure-NumPy rollout engine: the readable twin of the compiled core.

Implements planar rigid-body dynamics under magnetic wrench and
anisotropic drag, classical RK4 integration, the tracking loss, and its
exact reverse-mode gradient with respect to the current sequence.  The
compiled extension reimplements the same arithmetic; the two are compared
term by term in the kernel parity tests and by ``coilnav bench``.

All states here are SI: [x, y, theta, vx, vy, omega] in meters/radians.
"""

from __future__ import annotations

import numpy as np

from ..angles import wrap_angle


class PackedAdapter:
    """Per-point evaluation of a :class:`PackedField` with NumPy."""

    def __init__(self, packed):
        self.packed = packed
        self.n_coils = packed.n_coils
        p = packed
        self._R = np.empty((self.n_coils, 2, 2))
        self._R[:, 0, 0] = p.cos_a
        self._R[:, 0, 1] = -p.sin_a
        self._R[:, 1, 0] = p.sin_a
        self._R[:, 1, 1] = p.cos_a
        self._pu = p.pow_u.astype(float)
        self._pv = p.pow_v.astype(float)
        self._pum1 = np.maximum(p.pow_u - 1, 0)
        self._pvm1 = np.maximum(p.pow_v - 1, 0)
        self._pum2 = np.maximum(p.pow_u - 2, 0)
        self._pvm2 = np.maximum(p.pow_v - 2, 0)

    def _local(self, x: float, y: float):
        p = self.packed
        dx = x - p.centers[:, 0]
        dy = y - p.centers[:, 1]
        u = (p.cos_a * dx + p.sin_a * dy) * p.inv_rho
        v = (-p.sin_a * dx + p.cos_a * dy) * p.inv_rho
        return u, v

    def percoil_si(self, x: float, y: float):
        """Unit-current field (nc, 2) [T/A] and gradient (nc, 2, 2) [T/m/A]."""
        p = self.packed
        u, v = self._local(x, y)
        U = u[:, None] ** p.pow_u
        V = v[:, None] ** p.pow_v
        dU = self._pu * u[:, None] ** self._pum1
        dV = self._pv * v[:, None] ** self._pvm1
        B_loc = np.stack([(p.coef_x * U * V).sum(1), (p.coef_y * U * V).sum(1)], axis=1)
        G_loc = np.empty((self.n_coils, 2, 2))
        for comp, coef in enumerate((p.coef_x, p.coef_y)):
            G_loc[:, comp, 0] = (coef * dU * V).sum(1)
            G_loc[:, comp, 1] = (coef * U * dV).sum(1)
        B = np.einsum("cij,cj->ci", self._R, B_loc)
        G = np.einsum("cia,cab,cjb->cij", self._R, G_loc, self._R) * p.inv_rho[:, None, None]
        return B, G

    def percoil_hess_si(self, x: float, y: float) -> np.ndarray:
        """Second derivatives (nc, 2, 2, 2): d2 B_i / dx_j dx_k, per A."""
        p = self.packed
        u, v = self._local(x, y)
        U = u[:, None] ** p.pow_u
        V = v[:, None] ** p.pow_v
        dU = self._pu * u[:, None] ** self._pum1
        dV = self._pv * v[:, None] ** self._pvm1
        dUU = self._pu * (self._pu - 1) * u[:, None] ** self._pum2
        dVV = self._pv * (self._pv - 1) * v[:, None] ** self._pvm2
        H_loc = np.empty((self.n_coils, 2, 2, 2))
        for comp, coef in enumerate((p.coef_x, p.coef_y)):
            huu = (coef * dUU * V).sum(1)
            huv = (coef * dU * dV).sum(1)
            hvv = (coef * U * dVV).sum(1)
            H_loc[:, comp, 0, 0] = huu
            H_loc[:, comp, 0, 1] = huv
            H_loc[:, comp, 1, 0] = huv
            H_loc[:, comp, 1, 1] = hvv
        H = np.einsum("cia,cabg,cjb,ckg->cijk", self._R, H_loc, self._R, self._R)
        return H * (p.inv_rho**2)[:, None, None, None]


class MmFieldAdapter:
    """SI adapter over a model whose per-coil methods take millimeters."""

    def __init__(self, model):
        self.model = model
        self.n_coils = model.n_coils

    def percoil_si(self, x: float, y: float):
        return self.model.percoil(x * 1e3, y * 1e3)

    def percoil_hess_si(self, x: float, y: float):
        return self.model.percoil_hess(x * 1e3, y * 1e3)


def drag_matrix_si(theta: float, d_par: float, d_perp: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [d_par * c * c + d_perp * s * s, (d_par - d_perp) * c * s],
            [(d_par - d_perp) * c * s, d_par * s * s + d_perp * c * c],
        ]
    )


class PythonEngine:
    """Rollout/loss/gradient engine over any SI field adapter."""

    backend = "python"

    def __init__(self, adapter):
        self.adapter = adapter
        self.n_coils = adapter.n_coils

    # -- dynamics ----------------------------------------------------------

    def field_and_grad(self, x: float, y: float, currents: np.ndarray):
        Bc, Gc = self.adapter.percoil_si(x, y)
        return currents @ Bc, np.einsum("c,cij->ij", currents, Gc)

    def _moment_world(self, params, theta):
        c, s = np.cos(theta), np.sin(theta)
        au, av = params[3], params[4]
        return params[2] * np.array([c * au - s * av, s * au + c * av])

    def derivative(self, params: np.ndarray, state: np.ndarray, currents: np.ndarray) -> np.ndarray:
        mass, J = params[0], params[1]
        d_par, d_perp, d_r = params[5], params[6], params[7]
        B, G = self.field_and_grad(state[0], state[1], currents)
        mw = self._moment_world(params, state[2])
        F = G.T @ mw
        tau = mw[0] * B[1] - mw[1] * B[0]
        D = drag_matrix_si(state[2], d_par, d_perp)
        v = state[3:5]
        out = np.empty(6)
        out[0:2] = v
        out[2] = state[5]
        out[3:5] = (F - D @ v) / mass
        out[5] = (tau - d_r * state[5]) / J
        return out

    def _vjp(self, params, state, currents, lam):
        """(J_state^T lam, J_currents^T lam) of :meth:`derivative`."""
        mass, J = params[0], params[1]
        d_par, d_perp, d_r = params[5], params[6], params[7]
        Bc, Gc = self.adapter.percoil_si(state[0], state[1])
        Hc = self.adapter.percoil_hess_si(state[0], state[1])
        B = currents @ Bc
        G = np.einsum("c,cij->ij", currents, Gc)
        H = np.einsum("c,cijk->ijk", currents, Hc)
        theta = state[2]
        mw = self._moment_world(params, theta)
        dmw = params[2] * np.array(
            [
                -np.sin(theta) * params[3] - np.cos(theta) * params[4],
                np.cos(theta) * params[3] - np.sin(theta) * params[4],
            ]
        )
        D = drag_matrix_si(theta, d_par, d_perp)
        c, s = np.cos(theta), np.sin(theta)
        dD = (d_par - d_perp) * np.array([[-2 * c * s, c * c - s * s], [c * c - s * s, 2 * c * s]])
        v = state[3:5]

        Js = np.zeros((6, 6))
        Js[0, 3] = Js[1, 4] = Js[2, 5] = 1.0
        # d(vdot)/d(position): second field derivatives through the force.
        Js[3:5, 0:2] = np.einsum("i,ijk->jk", mw, H) / mass
        Js[3:5, 2] = (G.T @ dmw - dD @ v) / mass
        Js[3:5, 3:5] = -D / mass
        Js[5, 0] = (mw[0] * G[1, 0] - mw[1] * G[0, 0]) / J
        Js[5, 1] = (mw[0] * G[1, 1] - mw[1] * G[0, 1]) / J
        Js[5, 2] = (dmw[0] * B[1] - dmw[1] * B[0]) / J
        Js[5, 5] = -d_r / J

        JI = np.zeros((6, self.n_coils))
        JI[3:5, :] = np.einsum("i,cij->jc", mw, Gc) / mass
        JI[5, :] = (mw[0] * Bc[:, 1] - mw[1] * Bc[:, 0]) / J
        return Js.T @ lam, JI.T @ lam

    def rk4_step(self, params, state, currents, dt, return_stages=False):
        s1 = state
        k1 = self.derivative(params, s1, currents)
        s2 = s1 + 0.5 * dt * k1
        k2 = self.derivative(params, s2, currents)
        s3 = s1 + 0.5 * dt * k2
        k3 = self.derivative(params, s3, currents)
        s4 = s1 + dt * k3
        k4 = self.derivative(params, s4, currents)
        out = s1 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[2] = wrap_angle(out[2])
        if return_stages:
            return out, np.stack([s1, s2, s3, s4])
        return out

    def _rk4_vjp(self, params, stages, currents, dt, lam_next):
        a4 = dt / 6.0 * lam_next
        gs4, gI4 = self._vjp(params, stages[3], currents, a4)
        a3 = dt / 3.0 * lam_next + dt * gs4
        gs3, gI3 = self._vjp(params, stages[2], currents, a3)
        a2 = dt / 3.0 * lam_next + 0.5 * dt * gs3
        gs2, gI2 = self._vjp(params, stages[1], currents, a2)
        a1 = dt / 6.0 * lam_next + 0.5 * dt * gs2
        gs1, gI1 = self._vjp(params, stages[0], currents, a1)
        lam = lam_next + gs1 + gs2 + gs3 + gs4
        return lam, gI1 + gI2 + gI3 + gI4

    def rollout(self, params, state0, current_seq, dt):
        n = current_seq.shape[0]
        states = np.empty((n + 1, 6))
        states[0] = state0
        for k in range(n):
            states[k + 1] = self.rk4_step(params, states[k], current_seq[k], dt)
        return states

    # -- tracking loss -----------------------------------------------------

    @staticmethod
    def _stage_cost(state, target, w, terminal: bool):
        q00, q01, q11 = (w[4], w[5], w[6]) if terminal else (w[0], w[1], w[2])
        qth = w[7] if terminal else w[3]
        ex = (state[0] - target[0]) * 1e3
        ey = (state[1] - target[1]) * 1e3
        eth = wrap_angle(state[2] - target[2])
        cost = q00 * ex * ex + 2 * q01 * ex * ey + q11 * ey * ey + qth * eth * eth
        ws = w[8]
        if ws > 0:
            px, py = state[0] * 1e3, state[1] * 1e3
            rx = max(0.0, px - w[10]) + min(0.0, px - w[9])
            ry = max(0.0, py - w[12]) + min(0.0, py - w[11])
            cost += ws * (rx * rx + ry * ry)
        return cost

    @staticmethod
    def _stage_grad(state, target, w, terminal: bool):
        q00, q01, q11 = (w[4], w[5], w[6]) if terminal else (w[0], w[1], w[2])
        qth = w[7] if terminal else w[3]
        ex = (state[0] - target[0]) * 1e3
        ey = (state[1] - target[1]) * 1e3
        eth = wrap_angle(state[2] - target[2])
        g = np.zeros(6)
        g[0] = 2e3 * (q00 * ex + q01 * ey)
        g[1] = 2e3 * (q01 * ex + q11 * ey)
        g[2] = 2.0 * qth * eth
        ws = w[8]
        if ws > 0:
            px, py = state[0] * 1e3, state[1] * 1e3
            rx = max(0.0, px - w[10]) + min(0.0, px - w[9])
            ry = max(0.0, py - w[12]) + min(0.0, py - w[11])
            g[0] += 2e3 * ws * rx
            g[1] += 2e3 * ws * ry
        return g

    def _align_cost(self, params, state, currents, w) -> float:
        """Field-anchor penalty: w * ||B - B_ref * mhat(theta)||^2.

        The dipole's attitude rides on the field like a pendulum whose
        stiffness grows with |B|; holding the field at a small reference
        magnitude along the body axis keeps that pendulum well damped and
        always on the stable branch, while forces keep coming from the
        field gradients the coils shape independently.
        """
        if w[13] <= 0:
            return 0.0
        Bc, _ = self.adapter.percoil_si(state[0], state[1])
        B = currents @ Bc
        mhat = self._moment_world(params, state[2]) / params[2]
        e = B - w[14] * mhat
        return w[13] * float(e @ e)

    def _align_grads(self, params, state, currents, w):
        """(d/dstate, d/dcurrents) of :meth:`_align_cost`."""
        gs = np.zeros(6)
        gI = np.zeros(self.n_coils)
        if w[13] <= 0:
            return gs, gI
        Bc, Gc = self.adapter.percoil_si(state[0], state[1])
        B = currents @ Bc
        G = np.einsum("c,cij->ij", currents, Gc)
        theta = state[2]
        mhat = self._moment_world(params, theta) / params[2]
        dmhat = np.array(
            [
                -np.sin(theta) * params[3] - np.cos(theta) * params[4],
                np.cos(theta) * params[3] - np.sin(theta) * params[4],
            ]
        )
        e = B - w[14] * mhat
        dc_dB = 2.0 * w[13] * e
        gs[0:2] = G.T @ dc_dB
        gs[2] = -2.0 * w[13] * w[14] * float(e @ dmhat)
        gI[:] = Bc @ dc_dB
        return gs, gI

    def tracking_loss(self, params, state0, current_seq, dt, targets, w):
        n = current_seq.shape[0]
        states = np.empty((n + 1, 6))
        states[0] = state0
        loss = 0.0
        for k in range(n):
            loss += self._stage_cost(states[k], targets[k], w, terminal=False)
            loss += self._align_cost(params, states[k], current_seq[k], w)
            states[k + 1] = self.rk4_step(params, states[k], current_seq[k], dt)
        loss += self._stage_cost(states[n], targets[n], w, terminal=True)
        return loss, states

    def tracking_loss_grad(self, params, state0, current_seq, dt, targets, w):
        n = current_seq.shape[0]
        states = np.empty((n + 1, 6))
        states[0] = state0
        all_stages = np.empty((n, 4, 6))
        loss = 0.0
        for k in range(n):
            loss += self._stage_cost(states[k], targets[k], w, terminal=False)
            loss += self._align_cost(params, states[k], current_seq[k], w)
            states[k + 1], all_stages[k] = self.rk4_step(
                params, states[k], current_seq[k], dt, return_stages=True
            )
        loss += self._stage_cost(states[n], targets[n], w, terminal=True)

        grad = np.zeros_like(current_seq)
        lam = self._stage_grad(states[n], targets[n], w, terminal=True)
        for k in range(n - 1, -1, -1):
            lam, grad[k] = self._rk4_vjp(params, all_stages[k], current_seq[k], dt, lam)
            a_gs, a_gI = self._align_grads(params, states[k], current_seq[k], w)
            grad[k] += a_gI
            if k >= 1:
                lam = lam + self._stage_grad(states[k], targets[k], w, terminal=False) + a_gs
        return loss, grad, states
