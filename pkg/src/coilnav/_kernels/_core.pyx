# Compiled rollout engine: same contract as reference.PythonEngine, written
# against PackedField arrays.  Scratch lives on the C stack, so one engine
# instance is safe for concurrent readers.
import numpy as np

from libc.math cimport cos, sin, fmod

cdef double PI = 3.141592653589793238462643383279502884
cdef double TWO_PI = 6.283185307179586476925287

DEF MAX_COILS = 16
DEF MAX_DEG = 15

cdef inline double wrap_angle(double th) noexcept nogil:
    cdef double r = fmod(PI - th, TWO_PI)
    if r < 0:
        r += TWO_PI
    return PI - r


cdef class CompiledEngine:
    cdef double[:, ::1] centers
    cdef double[::1] cos_a
    cdef double[::1] sin_a
    cdef double[::1] inv_rho
    cdef double[:, ::1] coef_x
    cdef double[:, ::1] coef_y
    cdef int[::1] pow_u
    cdef int[::1] pow_v
    cdef int nc, nt, max_deg
    cdef public str backend
    cdef public int n_coils

    def __init__(self, packed):
        self.centers = packed.centers
        self.cos_a = packed.cos_a
        self.sin_a = packed.sin_a
        self.inv_rho = packed.inv_rho
        self.coef_x = packed.coef_x
        self.coef_y = packed.coef_y
        self.pow_u = packed.pow_u
        self.pow_v = packed.pow_v
        self.nc = packed.n_coils
        self.nt = packed.n_terms
        self.max_deg = packed.max_deg
        if self.nc > MAX_COILS:
            raise ValueError("compiled engine supports up to 16 coils")
        if self.max_deg > MAX_DEG:
            raise ValueError("compiled engine supports polynomial degree up to 15")
        self.backend = "compiled"
        self.n_coils = self.nc

    # ------------------------------------------------------------------
    # field evaluation
    # ------------------------------------------------------------------

    cdef void _percoil(self, double x, double y, bint want_hess,
                       double* Bc, double* Gc, double* Hc) noexcept nogil:
        # Layouts: Bc[c*2+i], Gc[c*4+i*2+j], Hc[c*8+i*4+j*2+k].
        cdef int c, t, i, pu, pv
        cdef double dx, dy, ca, sa, ir, u, v, cx, cy, m
        cdef double U[MAX_DEG + 1]
        cdef double V[MAX_DEG + 1]
        cdef double val_x, val_y, du_x, du_y, dv_x, dv_y
        cdef double huu_x, huv_x, hvv_x, huu_y, huv_y, hvv_y
        cdef double a00, a01, a10, a11
        cdef double t00, t01, t11, b00, b01, b10, b11
        cdef double s2
        for c in range(self.nc):
            dx = x - self.centers[c, 0]
            dy = y - self.centers[c, 1]
            ca = self.cos_a[c]
            sa = self.sin_a[c]
            ir = self.inv_rho[c]
            u = (ca * dx + sa * dy) * ir
            v = (-sa * dx + ca * dy) * ir
            U[0] = 1.0
            V[0] = 1.0
            for i in range(1, self.max_deg + 1):
                U[i] = U[i - 1] * u
                V[i] = V[i - 1] * v
            val_x = val_y = du_x = du_y = dv_x = dv_y = 0.0
            huu_x = huv_x = hvv_x = huu_y = huv_y = hvv_y = 0.0
            for t in range(self.nt):
                pu = self.pow_u[t]
                pv = self.pow_v[t]
                cx = self.coef_x[c, t]
                cy = self.coef_y[c, t]
                m = U[pu] * V[pv]
                val_x += cx * m
                val_y += cy * m
                if pu > 0:
                    m = pu * U[pu - 1] * V[pv]
                    du_x += cx * m
                    du_y += cy * m
                if pv > 0:
                    m = pv * U[pu] * V[pv - 1]
                    dv_x += cx * m
                    dv_y += cy * m
                if want_hess:
                    if pu > 1:
                        m = pu * (pu - 1) * U[pu - 2] * V[pv]
                        huu_x += cx * m
                        huu_y += cy * m
                    if pu > 0 and pv > 0:
                        m = pu * pv * U[pu - 1] * V[pv - 1]
                        huv_x += cx * m
                        huv_y += cy * m
                    if pv > 1:
                        m = pv * (pv - 1) * U[pu] * V[pv - 2]
                        hvv_x += cx * m
                        hvv_y += cy * m
            # field: B_world = R @ B_local
            Bc[2 * c] = ca * val_x - sa * val_y
            Bc[2 * c + 1] = sa * val_x + ca * val_y
            # gradient: G_world = ir * R @ G_local @ R^T
            a00 = ca * du_x - sa * du_y
            a01 = ca * dv_x - sa * dv_y
            a10 = sa * du_x + ca * du_y
            a11 = sa * dv_x + ca * dv_y
            Gc[4 * c + 0] = ir * (a00 * ca - a01 * sa)
            Gc[4 * c + 1] = ir * (a00 * sa + a01 * ca)
            Gc[4 * c + 2] = ir * (a10 * ca - a11 * sa)
            Gc[4 * c + 3] = ir * (a10 * sa + a11 * ca)
            if want_hess:
                s2 = ir * ir
                # rotate the component index, then both derivative indices
                t00 = ca * huu_x - sa * huu_y
                t01 = ca * huv_x - sa * huv_y
                t11 = ca * hvv_x - sa * hvv_y
                b00 = ca * t00 - sa * t01
                b01 = ca * t01 - sa * t11
                b10 = sa * t00 + ca * t01
                b11 = sa * t01 + ca * t11
                Hc[8 * c + 0] = s2 * (b00 * ca - b01 * sa)
                Hc[8 * c + 1] = s2 * (b00 * sa + b01 * ca)
                Hc[8 * c + 2] = s2 * (b10 * ca - b11 * sa)
                Hc[8 * c + 3] = s2 * (b10 * sa + b11 * ca)
                t00 = sa * huu_x + ca * huu_y
                t01 = sa * huv_x + ca * huv_y
                t11 = sa * hvv_x + ca * hvv_y
                b00 = ca * t00 - sa * t01
                b01 = ca * t01 - sa * t11
                b10 = sa * t00 + ca * t01
                b11 = sa * t01 + ca * t11
                Hc[8 * c + 4] = s2 * (b00 * ca - b01 * sa)
                Hc[8 * c + 5] = s2 * (b00 * sa + b01 * ca)
                Hc[8 * c + 6] = s2 * (b10 * ca - b11 * sa)
                Hc[8 * c + 7] = s2 * (b10 * sa + b11 * ca)

    def percoil_si(self, double x, double y):
        B = np.empty((self.nc, 2))
        G = np.empty((self.nc, 2, 2))
        cdef double[:, ::1] Bv = B
        cdef double[:, :, ::1] Gv = G
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef int c
        self._percoil(x, y, False, Bc, Gc, NULL)
        for c in range(self.nc):
            Bv[c, 0] = Bc[2 * c]
            Bv[c, 1] = Bc[2 * c + 1]
            Gv[c, 0, 0] = Gc[4 * c + 0]
            Gv[c, 0, 1] = Gc[4 * c + 1]
            Gv[c, 1, 0] = Gc[4 * c + 2]
            Gv[c, 1, 1] = Gc[4 * c + 3]
        return B, G

    def percoil_hess_si(self, double x, double y):
        H = np.empty((self.nc, 2, 2, 2))
        cdef double[:, :, :, ::1] Hv = H
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef double Hc[8 * MAX_COILS]
        cdef int c, i, j, k
        self._percoil(x, y, True, Bc, Gc, Hc)
        for c in range(self.nc):
            for i in range(2):
                for j in range(2):
                    for k in range(2):
                        Hv[c, i, j, k] = Hc[8 * c + 4 * i + 2 * j + k]
        return H

    def field_and_grad(self, double x, double y, currents):
        cdef double[::1] Iv = np.ascontiguousarray(currents, dtype=np.float64)
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef int c
        cdef double w
        self._percoil(x, y, False, Bc, Gc, NULL)
        B = np.zeros(2)
        G = np.zeros((2, 2))
        cdef double[::1] Bv = B
        cdef double[:, ::1] Gv = G
        for c in range(self.nc):
            w = Iv[c]
            Bv[0] += w * Bc[2 * c]
            Bv[1] += w * Bc[2 * c + 1]
            Gv[0, 0] += w * Gc[4 * c + 0]
            Gv[0, 1] += w * Gc[4 * c + 1]
            Gv[1, 0] += w * Gc[4 * c + 2]
            Gv[1, 1] += w * Gc[4 * c + 3]
        return B, G

    # ------------------------------------------------------------------
    # dynamics
    # ------------------------------------------------------------------

    cdef void _derivative(self, double* p, double* s, double* I, double* out) noexcept nogil:
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef double B0 = 0.0, B1 = 0.0, G00 = 0.0, G01 = 0.0, G10 = 0.0, G11 = 0.0
        cdef int c
        cdef double w
        self._percoil(s[0], s[1], False, Bc, Gc, NULL)
        for c in range(self.nc):
            w = I[c]
            B0 += w * Bc[2 * c]
            B1 += w * Bc[2 * c + 1]
            G00 += w * Gc[4 * c + 0]
            G01 += w * Gc[4 * c + 1]
            G10 += w * Gc[4 * c + 2]
            G11 += w * Gc[4 * c + 3]
        cdef double mass = p[0], J = p[1], mom = p[2], au = p[3], av = p[4]
        cdef double dpar = p[5], dperp = p[6], dr = p[7]
        cdef double ct = cos(s[2]), st = sin(s[2])
        cdef double mwx = mom * (ct * au - st * av)
        cdef double mwy = mom * (st * au + ct * av)
        cdef double Fx = mwx * G00 + mwy * G10
        cdef double Fy = mwx * G01 + mwy * G11
        cdef double tau = mwx * B1 - mwy * B0
        cdef double D00 = dpar * ct * ct + dperp * st * st
        cdef double D01 = (dpar - dperp) * ct * st
        cdef double D11 = dpar * st * st + dperp * ct * ct
        out[0] = s[3]
        out[1] = s[4]
        out[2] = s[5]
        out[3] = (Fx - (D00 * s[3] + D01 * s[4])) / mass
        out[4] = (Fy - (D01 * s[3] + D11 * s[4])) / mass
        out[5] = (tau - dr * s[5]) / J

    cdef void _vjp(self, double* p, double* s, double* I, double* lam,
                   double* gs, double* gI) noexcept nogil:
        # gs += (df/dstate)^T lam ; gI += (df/dI)^T lam
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef double Hc[8 * MAX_COILS]
        cdef double B0 = 0, B1 = 0, G00 = 0, G01 = 0, G10 = 0, G11 = 0
        cdef double H000 = 0, H001 = 0, H010 = 0, H011 = 0
        cdef double H100 = 0, H101 = 0, H110 = 0, H111 = 0
        cdef int c
        cdef double w
        self._percoil(s[0], s[1], True, Bc, Gc, Hc)
        for c in range(self.nc):
            w = I[c]
            B0 += w * Bc[2 * c]
            B1 += w * Bc[2 * c + 1]
            G00 += w * Gc[4 * c + 0]
            G01 += w * Gc[4 * c + 1]
            G10 += w * Gc[4 * c + 2]
            G11 += w * Gc[4 * c + 3]
            H000 += w * Hc[8 * c + 0]
            H001 += w * Hc[8 * c + 1]
            H010 += w * Hc[8 * c + 2]
            H011 += w * Hc[8 * c + 3]
            H100 += w * Hc[8 * c + 4]
            H101 += w * Hc[8 * c + 5]
            H110 += w * Hc[8 * c + 6]
            H111 += w * Hc[8 * c + 7]
        cdef double mass = p[0], J = p[1], mom = p[2], au = p[3], av = p[4]
        cdef double dpar = p[5], dperp = p[6], dr = p[7]
        cdef double ct = cos(s[2]), st = sin(s[2])
        cdef double mwx = mom * (ct * au - st * av)
        cdef double mwy = mom * (st * au + ct * av)
        cdef double dmwx = mom * (-st * au - ct * av)
        cdef double dmwy = mom * (ct * au - st * av)
        cdef double D00 = dpar * ct * ct + dperp * st * st
        cdef double D01 = (dpar - dperp) * ct * st
        cdef double D11 = dpar * st * st + dperp * ct * ct
        cdef double dd = dpar - dperp
        cdef double dD00 = -2.0 * dd * ct * st
        cdef double dD01 = dd * (ct * ct - st * st)
        cdef double dD11 = 2.0 * dd * ct * st
        cdef double vx = s[3], vy = s[4]
        cdef double A00 = (mwx * H000 + mwy * H100) / mass
        cdef double A01 = (mwx * H001 + mwy * H101) / mass
        cdef double A10 = (mwx * H010 + mwy * H110) / mass
        cdef double A11 = (mwx * H011 + mwy * H111) / mass
        cdef double T0 = (G00 * dmwx + G10 * dmwy - (dD00 * vx + dD01 * vy)) / mass
        cdef double T1 = (G01 * dmwx + G11 * dmwy - (dD01 * vx + dD11 * vy)) / mass
        cdef double W0 = (mwx * G10 - mwy * G00) / J
        cdef double W1 = (mwx * G11 - mwy * G01) / J
        cdef double Wth = (dmwx * B1 - dmwy * B0) / J
        cdef double l0 = lam[0], l1 = lam[1], l2 = lam[2]
        cdef double l3 = lam[3], l4 = lam[4], l5 = lam[5]
        gs[0] += A00 * l3 + A10 * l4 + W0 * l5
        gs[1] += A01 * l3 + A11 * l4 + W1 * l5
        gs[2] += T0 * l3 + T1 * l4 + Wth * l5
        gs[3] += l0 - (D00 * l3 + D01 * l4) / mass
        gs[4] += l1 - (D01 * l3 + D11 * l4) / mass
        gs[5] += l2 - dr / J * l5
        cdef double fcx, fcy, tc
        for c in range(self.nc):
            fcx = mwx * Gc[4 * c + 0] + mwy * Gc[4 * c + 2]
            fcy = mwx * Gc[4 * c + 1] + mwy * Gc[4 * c + 3]
            tc = mwx * Bc[2 * c + 1] - mwy * Bc[2 * c]
            gI[c] += (fcx * l3 + fcy * l4) / mass + tc * l5 / J

    cdef void _rk4(self, double* p, double* s, double* I, double dt,
                   double* out, double* stages) noexcept nogil:
        cdef double k1[6]
        cdef double k2[6]
        cdef double k3[6]
        cdef double k4[6]
        cdef double tmp[6]
        cdef int i
        self._derivative(p, s, I, k1)
        if stages != NULL:
            for i in range(6):
                stages[i] = s[i]
        for i in range(6):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        if stages != NULL:
            for i in range(6):
                stages[6 + i] = tmp[i]
        self._derivative(p, tmp, I, k2)
        for i in range(6):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        if stages != NULL:
            for i in range(6):
                stages[12 + i] = tmp[i]
        self._derivative(p, tmp, I, k3)
        for i in range(6):
            tmp[i] = s[i] + dt * k3[i]
        if stages != NULL:
            for i in range(6):
                stages[18 + i] = tmp[i]
        self._derivative(p, tmp, I, k4)
        for i in range(6):
            out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[2] = wrap_angle(out[2])

    cdef void _rk4_vjp(self, double* p, double* stages, double* I, double dt,
                       double* lam_next, double* lam_out, double* gI) noexcept nogil:
        cdef double a[6]
        cdef double gs4[6]
        cdef double gs3[6]
        cdef double gs2[6]
        cdef double gs1[6]
        cdef int i
        for i in range(6):
            gs4[i] = gs3[i] = gs2[i] = gs1[i] = 0.0
        for i in range(6):
            a[i] = dt / 6.0 * lam_next[i]
        self._vjp(p, stages + 18, I, a, gs4, gI)
        for i in range(6):
            a[i] = dt / 3.0 * lam_next[i] + dt * gs4[i]
        self._vjp(p, stages + 12, I, a, gs3, gI)
        for i in range(6):
            a[i] = dt / 3.0 * lam_next[i] + 0.5 * dt * gs3[i]
        self._vjp(p, stages + 6, I, a, gs2, gI)
        for i in range(6):
            a[i] = dt / 6.0 * lam_next[i] + 0.5 * dt * gs2[i]
        self._vjp(p, stages, I, a, gs1, gI)
        for i in range(6):
            lam_out[i] = lam_next[i] + gs1[i] + gs2[i] + gs3[i] + gs4[i]

    # ------------------------------------------------------------------
    # tracking loss
    # ------------------------------------------------------------------

    cdef double _stage_cost(self, double* s, double* tgt, double* w, bint terminal) noexcept nogil:
        cdef double q00, q01, q11, qth
        if terminal:
            q00 = w[4]; q01 = w[5]; q11 = w[6]; qth = w[7]
        else:
            q00 = w[0]; q01 = w[1]; q11 = w[2]; qth = w[3]
        cdef double ex = (s[0] - tgt[0]) * 1e3
        cdef double ey = (s[1] - tgt[1]) * 1e3
        cdef double eth = wrap_angle(s[2] - tgt[2])
        cdef double cost = q00 * ex * ex + 2.0 * q01 * ex * ey + q11 * ey * ey + qth * eth * eth
        cdef double ws = w[8]
        cdef double px, py, rx, ry
        if ws > 0:
            px = s[0] * 1e3
            py = s[1] * 1e3
            rx = 0.0
            ry = 0.0
            if px > w[10]:
                rx = px - w[10]
            elif px < w[9]:
                rx = px - w[9]
            if py > w[12]:
                ry = py - w[12]
            elif py < w[11]:
                ry = py - w[11]
            cost += ws * (rx * rx + ry * ry)
        return cost

    cdef void _stage_grad(self, double* s, double* tgt, double* w, bint terminal,
                          double* g) noexcept nogil:
        cdef double q00, q01, q11, qth
        if terminal:
            q00 = w[4]; q01 = w[5]; q11 = w[6]; qth = w[7]
        else:
            q00 = w[0]; q01 = w[1]; q11 = w[2]; qth = w[3]
        cdef double ex = (s[0] - tgt[0]) * 1e3
        cdef double ey = (s[1] - tgt[1]) * 1e3
        cdef double eth = wrap_angle(s[2] - tgt[2])
        g[0] = 2e3 * (q00 * ex + q01 * ey)
        g[1] = 2e3 * (q01 * ex + q11 * ey)
        g[2] = 2.0 * qth * eth
        g[3] = 0.0
        g[4] = 0.0
        g[5] = 0.0
        cdef double ws = w[8]
        cdef double px, py, rx, ry
        if ws > 0:
            px = s[0] * 1e3
            py = s[1] * 1e3
            rx = 0.0
            ry = 0.0
            if px > w[10]:
                rx = px - w[10]
            elif px < w[9]:
                rx = px - w[9]
            if py > w[12]:
                ry = py - w[12]
            elif py < w[11]:
                ry = py - w[11]
            g[0] += 2e3 * ws * rx
            g[1] += 2e3 * ws * ry

    cdef double _align_cost(self, double* p, double* s, double* I, double* w) noexcept nogil:
        # Field anchor: w13 * ||B - w14 * mhat(theta)||^2.  Holding the
        # field at a small reference magnitude along the body axis keeps
        # the attitude pendulum damped and on the stable branch.
        if w[13] <= 0:
            return 0.0
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef double B0 = 0.0, B1 = 0.0
        cdef int c
        self._percoil(s[0], s[1], False, Bc, Gc, NULL)
        for c in range(self.nc):
            B0 += I[c] * Bc[2 * c]
            B1 += I[c] * Bc[2 * c + 1]
        cdef double ct = cos(s[2]), st = sin(s[2])
        cdef double e0 = B0 - w[14] * (ct * p[3] - st * p[4])
        cdef double e1 = B1 - w[14] * (st * p[3] + ct * p[4])
        return w[13] * (e0 * e0 + e1 * e1)

    cdef void _align_grads(self, double* p, double* s, double* I, double* w,
                           double* gs, double* gI) noexcept nogil:
        # gs += d(align)/dstate, gI += d(align)/dI
        if w[13] <= 0:
            return
        cdef double Bc[2 * MAX_COILS]
        cdef double Gc[4 * MAX_COILS]
        cdef double B0 = 0.0, B1 = 0.0, G00 = 0.0, G01 = 0.0, G10 = 0.0, G11 = 0.0
        cdef int c
        cdef double wc
        self._percoil(s[0], s[1], False, Bc, Gc, NULL)
        for c in range(self.nc):
            wc = I[c]
            B0 += wc * Bc[2 * c]
            B1 += wc * Bc[2 * c + 1]
            G00 += wc * Gc[4 * c + 0]
            G01 += wc * Gc[4 * c + 1]
            G10 += wc * Gc[4 * c + 2]
            G11 += wc * Gc[4 * c + 3]
        cdef double ct = cos(s[2]), st = sin(s[2])
        cdef double mhx = ct * p[3] - st * p[4]
        cdef double mhy = st * p[3] + ct * p[4]
        cdef double dmhx = -st * p[3] - ct * p[4]
        cdef double dmhy = ct * p[3] - st * p[4]
        cdef double e0 = B0 - w[14] * mhx
        cdef double e1 = B1 - w[14] * mhy
        cdef double cB0 = 2.0 * w[13] * e0
        cdef double cB1 = 2.0 * w[13] * e1
        gs[0] += cB0 * G00 + cB1 * G10
        gs[1] += cB0 * G01 + cB1 * G11
        gs[2] += -w[14] * (cB0 * dmhx + cB1 * dmhy)
        for c in range(self.nc):
            gI[c] += cB0 * Bc[2 * c] + cB1 * Bc[2 * c + 1]

    # ------------------------------------------------------------------
    # public API (mirrors reference.PythonEngine)
    # ------------------------------------------------------------------

    def rk4_step(self, params, state, currents, double dt, bint return_stages=False):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[::1] sv = np.ascontiguousarray(state, dtype=np.float64)
        cdef double[::1] Iv = np.ascontiguousarray(currents, dtype=np.float64)
        cdef double stages[24]
        out = np.empty(6)
        cdef double[::1] ov = out
        self._rk4(&pv[0], &sv[0], &Iv[0], dt, &ov[0], stages if return_stages else NULL)
        cdef int i
        if return_stages:
            st = np.empty((4, 6))
            stv = st.reshape(-1)
            for i in range(24):
                stv[i] = stages[i]
            return out, st
        return out

    def rollout(self, params, state0, current_seq, double dt):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[::1] s0 = np.ascontiguousarray(state0, dtype=np.float64)
        cdef double[:, ::1] Iv = np.ascontiguousarray(current_seq, dtype=np.float64)
        cdef int n = Iv.shape[0]
        states = np.empty((n + 1, 6))
        cdef double[:, ::1] sv = states
        cdef int k, i
        for i in range(6):
            sv[0, i] = s0[i]
        with nogil:
            for k in range(n):
                self._rk4(&pv[0], &sv[k, 0], &Iv[k, 0], dt, &sv[k + 1, 0], NULL)
        return states

    def tracking_loss(self, params, state0, current_seq, double dt, targets, w):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[::1] s0 = np.ascontiguousarray(state0, dtype=np.float64)
        cdef double[:, ::1] Iv = np.ascontiguousarray(current_seq, dtype=np.float64)
        cdef double[:, ::1] tv = np.ascontiguousarray(targets, dtype=np.float64)
        cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
        cdef int n = Iv.shape[0]
        states = np.empty((n + 1, 6))
        cdef double[:, ::1] sv = states
        cdef double loss = 0.0
        cdef int k, i
        for i in range(6):
            sv[0, i] = s0[i]
        with nogil:
            for k in range(n):
                loss += self._stage_cost(&sv[k, 0], &tv[k, 0], &wv[0], False)
                loss += self._align_cost(&pv[0], &sv[k, 0], &Iv[k, 0], &wv[0])
                self._rk4(&pv[0], &sv[k, 0], &Iv[k, 0], dt, &sv[k + 1, 0], NULL)
            loss += self._stage_cost(&sv[n, 0], &tv[n, 0], &wv[0], True)
        return loss, states

    def tracking_loss_grad(self, params, state0, current_seq, double dt, targets, w):
        cdef double[::1] pv = np.ascontiguousarray(params, dtype=np.float64)
        cdef double[::1] s0 = np.ascontiguousarray(state0, dtype=np.float64)
        cdef double[:, ::1] Iv = np.ascontiguousarray(current_seq, dtype=np.float64)
        cdef double[:, ::1] tv = np.ascontiguousarray(targets, dtype=np.float64)
        cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
        cdef int n = Iv.shape[0]
        states = np.empty((n + 1, 6))
        grad = np.zeros((n, self.nc))
        all_stages = np.empty((n, 24))
        cdef double[:, ::1] sv = states
        cdef double[:, ::1] gv = grad
        cdef double[:, ::1] stv = all_stages
        cdef double loss = 0.0
        cdef double lam[6]
        cdef double lam_prev[6]
        cdef double sg[6]
        cdef int k, i
        cdef double ag[6]
        for i in range(6):
            sv[0, i] = s0[i]
        with nogil:
            for k in range(n):
                loss += self._stage_cost(&sv[k, 0], &tv[k, 0], &wv[0], False)
                loss += self._align_cost(&pv[0], &sv[k, 0], &Iv[k, 0], &wv[0])
                self._rk4(&pv[0], &sv[k, 0], &Iv[k, 0], dt, &sv[k + 1, 0], &stv[k, 0])
            loss += self._stage_cost(&sv[n, 0], &tv[n, 0], &wv[0], True)
            self._stage_grad(&sv[n, 0], &tv[n, 0], &wv[0], True, lam)
            for k in range(n - 1, -1, -1):
                self._rk4_vjp(&pv[0], &stv[k, 0], &Iv[k, 0], dt, lam, lam_prev, &gv[k, 0])
                for i in range(6):
                    ag[i] = 0.0
                self._align_grads(&pv[0], &sv[k, 0], &Iv[k, 0], &wv[0], ag, &gv[k, 0])
                if k >= 1:
                    self._stage_grad(&sv[k, 0], &tv[k, 0], &wv[0], False, sg)
                    for i in range(6):
                        lam[i] = lam_prev[i] + sg[i] + ag[i]
                else:
                    for i in range(6):
                        lam[i] = lam_prev[i]
        return loss, grad, states
