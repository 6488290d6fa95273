"""Zernike-polynomial field models: basis, least-squares fit, analytic eval.

Each coil's unit-current field components are represented as truncated
Zernike expansions on a scaled/shifted disk centered at the coil:

    Bx(x, y) ~ sum a_nm Z_nm(u, v),   By(x, y) ~ sum b_nm Z_nm(u, v)

with (u, v) the disk-local coordinates.  The basis is kept in Cartesian
monomial form so values, first and second spatial derivatives are exact
polynomial evaluations; that is what makes the field model differentiable
inside a gradient-based controller.

Term ordering follows the tabulated single-index Cartesian convention:
    #0: 1, #1: x, #2: y, #3: 2(x^2+y^2)-1, #4: x^2-y^2, #5: 2xy, ...
i.e. radial degree n ascending, azimuthal frequency m ascending within n,
cosine before sine.  The index list is part of the model file format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.polynomial import polyval2d
from scipy.signal import convolve2d

from .angles import rot2
from ._kernels import PackedField
from .field_oracle import COIL_ORDER, FACE_ANGLES, FieldSampleGrid

MODEL_FORMAT_TAG = "coilnav-zernike-v1"

# Fits whose design matrix condition estimate exceeds this are rejected:
# with disk scaling the coordinates stay <= 1, so ill-conditioning means a
# misconfigured frame rather than a hard problem.
CONDITION_LIMIT = 1e8

# Slack for the disk-coverage checks; the tabulated normalization radii are
# rounded to three decimals and can undershoot the farthest workspace
# corner by a few parts in 1e6.
RHO_TOL = 1e-3


class InvalidTermError(ValueError):
    """Zernike term with inconsistent (n, m) indices."""


class DegenerateFitError(ValueError):
    """Least-squares fit rejected (rank deficiency / conditioning)."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class CoverageError(ValueError):
    """Evaluation point not covered by any coil's disk."""


def term_indices(order: int) -> list[tuple[int, int, int]]:
    """(n, m, sign) triples up to radial degree ``order``.

    ``sign`` is +1 for the cos(m*phi) family and -1 for sin(m*phi).
    """
    terms = []
    for n in range(order + 1):
        for m in range(n % 2, n + 1, 2):
            if m == 0:
                terms.append((n, 0, +1))
            else:
                terms.append((n, m, +1))
                terms.append((n, m, -1))
    return terms


def radial_poly(n: int, m: int, rho):
    """Radial polynomial R_n^m evaluated at ``rho``.

    The finite alternating factorial sum; requires n >= m >= 0 with
    n - m even.
    """
    if m < 0 or n < m:
        raise InvalidTermError(f"require n >= m >= 0, got (n={n}, m={m})")
    if (n - m) % 2:
        raise InvalidTermError(f"n - m must be even, got (n={n}, m={m})")
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        c = (
            (-1) ** k
            * math.factorial(n - k)
            / (
                math.factorial(k)
                * math.factorial((n + m) // 2 - k)
                * math.factorial((n - m) // 2 - k)
            )
        )
        out = out + c * rho ** (n - 2 * k)
    return out if out.shape else float(out)


def _angular_mono(m: int, sign: int) -> np.ndarray:
    """Monomial table of rho^m cos(m phi) (sign=+1) or rho^m sin(m phi)."""
    c = np.zeros((m + 1, m + 1))
    for t in range(m + 1):
        binom = math.comb(m, t)
        if sign > 0 and t % 2 == 0:
            c[m - t, t] = binom * (-1) ** (t // 2)
        elif sign < 0 and t % 2 == 1:
            c[m - t, t] = binom * (-1) ** ((t - 1) // 2)
    return c


def _radial_even_mono(p: int) -> np.ndarray:
    """Monomial table of (u^2 + v^2)^p."""
    c = np.zeros((2 * p + 1, 2 * p + 1))
    for s in range(p + 1):
        c[2 * s, 2 * (p - s)] = math.comb(p, s)
    return c


def term_monomials(n: int, m: int, sign: int) -> np.ndarray:
    """(n+1, n+1) monomial coefficients of Z_n^m in local (u, v)."""
    if m < 0 or n < m or (n - m) % 2:
        raise InvalidTermError(f"invalid term (n={n}, m={m})")
    ang = _angular_mono(m, sign)
    out = np.zeros((n + 1, n + 1))
    for k in range((n - m) // 2 + 1):
        c = (
            (-1) ** k
            * math.factorial(n - k)
            / (
                math.factorial(k)
                * math.factorial((n + m) // 2 - k)
                * math.factorial((n - m) // 2 - k)
            )
        )
        block = c * convolve2d(_radial_even_mono((n - 2 * k - m) // 2), ang)
        out[: block.shape[0], : block.shape[1]] += block
    return out


def _mono_du(c: np.ndarray) -> np.ndarray:
    out = np.zeros_like(c)
    if c.shape[0] > 1:
        out[:-1, :] = c[1:, :] * np.arange(1, c.shape[0])[:, None]
    return out


def _mono_dv(c: np.ndarray) -> np.ndarray:
    out = np.zeros_like(c)
    if c.shape[1] > 1:
        out[:, :-1] = c[:, 1:] * np.arange(1, c.shape[1])
    return out


@dataclass(frozen=True)
class ZernikeBasis:
    """Cartesian Zernike basis up to radial degree ``order``."""

    order: int
    terms: tuple[tuple[int, int, int], ...]
    mono: np.ndarray  # (n_terms, order+1, order+1)

    @classmethod
    def build(cls, order: int) -> "ZernikeBasis":
        terms = term_indices(order)
        mono = np.zeros((len(terms), order + 1, order + 1))
        for t, (n, m, s) in enumerate(terms):
            tab = term_monomials(n, m, s)
            mono[t, : tab.shape[0], : tab.shape[1]] = tab
        return cls(order=order, terms=tuple(terms), mono=mono)

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def design_matrix(self, u, v) -> np.ndarray:
        """(n_points, n_terms) evaluation of every term at (u, v)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.stack([polyval2d(u, v, self.mono[t]) for t in range(self.n_terms)], axis=-1)


_BASIS_CACHE: dict[int, ZernikeBasis] = {}


def get_basis(order: int) -> ZernikeBasis:
    if order not in _BASIS_CACHE:
        _BASIS_CACHE[order] = ZernikeBasis.build(order)
    return _BASIS_CACHE[order]


def basis_eval(basis: ZernikeBasis, term_index: int, u, v):
    """Evaluate one basis term; raises IndexError for a bad index."""
    if not 0 <= term_index < basis.n_terms:
        raise IndexError(f"term index {term_index} out of range 0..{basis.n_terms - 1}")
    out = polyval2d(np.asarray(u, dtype=float), np.asarray(v, dtype=float), basis.mono[term_index])
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DiskFrame:
    """Scaled/shifted unit-disk frame: (x, y) -> ((x, y) - center) / rho_max."""

    center: tuple[float, float]
    rho_max: float

    def __post_init__(self):
        if self.rho_max <= 0:
            raise ValueError("rho_max must be positive")

    def to_local(self, points_mm: np.ndarray) -> np.ndarray:
        return (np.asarray(points_mm, dtype=float) - np.asarray(self.center)) / self.rho_max


@dataclass(frozen=True)
class FitReport:
    """Quality summary of one coil fit (units: tesla where dimensional)."""

    mae: float
    r_squared: tuple[float, float]
    max_abs_error: float
    divergence_rms_ratio: float
    condition: float


def _r2(y, pred) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        return float("nan")
    return 1.0 - float(((y - pred) ** 2).sum()) / sst


def fit(
    samples: FieldSampleGrid,
    frame: DiskFrame,
    order: int,
    div_penalty: float = 0.0,
) -> tuple[np.ndarray, FitReport]:
    """Least-squares Zernike coefficients for both field components.

    Parameters
    ----------
    samples : FieldSampleGrid
        Unit-current samples; all nodes must map inside the unit disk.
    frame : DiskFrame
        Disk frame of the coil being fitted.
    order : int
        Radial degree of the truncated expansion.
    div_penalty : float
        Optional weight coupling the two components through a planar
        divergence penalty at the sample points.  Zero (default) gives two
        independent ordinary least-squares problems; divergence-freeness is
        then a property to verify, not a constraint.

    Returns
    -------
    coeffs : (2, n_terms) array
        Row 0 for Bx, row 1 for By.
    report : FitReport

    The solver factorizes the design matrix orthogonally (no normal
    equations) and rejects fits whose condition estimate exceeds 1e8.
    """
    basis = get_basis(order)
    pts = samples.points()
    vals = samples.values()
    q = frame.to_local(pts)
    rho = np.hypot(q[:, 0], q[:, 1])
    if rho.max() > 1.0 + RHO_TOL:
        raise ValueError(f"samples leave the unit disk (max rho {rho.max():.6f})")
    if pts.shape[0] < 3 * basis.n_terms:
        raise ValueError("need at least 3 samples per basis term")

    Z = basis.design_matrix(q[:, 0], q[:, 1])
    if div_penalty > 0.0:
        Zu = np.stack(
            [polyval2d(q[:, 0], q[:, 1], _mono_du(basis.mono[t])) for t in range(basis.n_terms)],
            axis=-1,
        )
        Zv = np.stack(
            [polyval2d(q[:, 0], q[:, 1], _mono_dv(basis.mono[t])) for t in range(basis.n_terms)],
            axis=-1,
        )
        m = pts.shape[0]
        nt = basis.n_terms
        A = np.zeros((2 * m + m, 2 * nt))
        rhs = np.zeros(2 * m + m)
        A[:m, :nt] = Z
        A[m : 2 * m, nt:] = Z
        A[2 * m :, :nt] = div_penalty * Zu
        A[2 * m :, nt:] = div_penalty * Zv
        rhs[:m] = vals[:, 0]
        rhs[m : 2 * m] = vals[:, 1]
        sol, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if rank < 2 * nt or cond > CONDITION_LIMIT:
            raise DegenerateFitError("rank-deficient or ill-conditioned fit", cond)
        coeffs = sol.reshape(2, nt)
    else:
        sol, _, rank, sv = np.linalg.lstsq(Z, vals, rcond=None)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if rank < basis.n_terms or cond > CONDITION_LIMIT:
            raise DegenerateFitError("rank-deficient or ill-conditioned fit", cond)
        coeffs = sol.T

    pred = Z @ coeffs.T
    resid = vals - pred
    mae = float(np.abs(resid).mean())
    r2 = (_r2(vals[:, 0], pred[:, 0]), _r2(vals[:, 1], pred[:, 1]))
    max_err = float(np.abs(resid).max())

    # Analytic planar divergence of the fitted polynomial at the samples,
    # relative to the RMS Frobenius norm of its gradient (scale-free).
    du = np.stack([_mono_du(basis.mono[t]) for t in range(basis.n_terms)])
    dv = np.stack([_mono_dv(basis.mono[t]) for t in range(basis.n_terms)])
    gxx = polyval2d(q[:, 0], q[:, 1], np.tensordot(coeffs[0], du, axes=1))
    gxy = polyval2d(q[:, 0], q[:, 1], np.tensordot(coeffs[0], dv, axes=1))
    gyx = polyval2d(q[:, 0], q[:, 1], np.tensordot(coeffs[1], du, axes=1))
    gyy = polyval2d(q[:, 0], q[:, 1], np.tensordot(coeffs[1], dv, axes=1))
    div_rms = float(np.sqrt(np.mean((gxx + gyy) ** 2)))
    grad_rms = float(np.sqrt(np.mean(gxx**2 + gxy**2 + gyx**2 + gyy**2)))
    ratio = div_rms / grad_rms if grad_rms > 0 else float("nan")

    return coeffs, FitReport(
        mae=mae, r_squared=r2, max_abs_error=max_err, divergence_rms_ratio=ratio, condition=cond
    )


def order_selection_report(
    samples: FieldSampleGrid, frame: DiskFrame, orders=range(1, 7)
) -> list[dict]:
    """One fit per order; rows of (order, mae, r2_bx, r2_by, r2_mean)."""
    rows = []
    for order in orders:
        _, rep = fit(samples, frame, order)
        r2m = float(np.mean(rep.r_squared))
        rows.append(
            {
                "order": int(order),
                "mae": rep.mae,
                "r2_bx": rep.r_squared[0],
                "r2_by": rep.r_squared[1],
                "r2_mean": r2m,
            }
        )
    return rows


def select_order(report_rows: list[dict], gain_threshold: float = 0.005) -> int:
    """Saturation rule: last order before the mean-R2 gain drops below threshold."""
    prev = None
    for row in report_rows:
        if prev is not None and row["r2_mean"] - prev["r2_mean"] < gain_threshold:
            return prev["order"]
        prev = row
    return report_rows[-1]["order"]


@dataclass(frozen=True)
class CoilFieldFit:
    """One coil's fitted expansion plus its placement in the workspace."""

    name: str
    face: str
    face_angle: float
    frame: DiskFrame
    order: int
    coef_bx: np.ndarray
    coef_by: np.ndarray

    def __post_init__(self):
        nt = len(term_indices(self.order))
        if self.coef_bx.shape != (nt,) or self.coef_by.shape != (nt,):
            raise ValueError("coefficient length does not match the basis term count")


@dataclass
class ZernikeFieldModel:
    """Per-coil Zernike fits; evaluation superposes current-weighted coils.

    Evaluation at a workspace point rotates the query into each coil's
    canonical frame, evaluates the local polynomials, and rotates the
    field vector back, so the four same-class coils share one fit.
    Instances are immutable by convention and safe for concurrent reads.
    """

    coils: tuple[CoilFieldFit, ...]
    _mono: np.ndarray = field(init=False, repr=False)
    _deg: int = field(init=False, repr=False)

    def __post_init__(self):
        deg = max(c.order for c in self.coils)
        nc = len(self.coils)
        mono = np.zeros((nc, 2, deg + 1, deg + 1))
        for i, c in enumerate(self.coils):
            basis = get_basis(c.order)
            d = c.order + 1
            mono[i, 0, :d, :d] = np.tensordot(c.coef_bx, basis.mono, axes=1)
            mono[i, 1, :d, :d] = np.tensordot(c.coef_by, basis.mono, axes=1)
        self._mono = mono
        self._deg = deg

    @property
    def n_coils(self) -> int:
        return len(self.coils)

    def _locals(self, point_mm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = np.asarray(point_mm, dtype=float)
        qs = np.empty((self.n_coils, 2))
        for i, c in enumerate(self.coils):
            d = p - np.asarray(c.frame.center)
            qs[i] = rot2(-c.face_angle) @ d / c.frame.rho_max
        rho = np.hypot(qs[:, 0], qs[:, 1])
        if rho.min() > 1.0 + RHO_TOL:
            raise CoverageError(f"point {p} mm outside every coil's disk")
        return p, qs, rho

    def eval_field(self, point_mm, currents) -> np.ndarray:
        """Field (T) at a workspace point for the given currents."""
        I = np.asarray(currents, dtype=float)
        if I.shape != (self.n_coils,):
            raise ValueError(f"expected {self.n_coils} currents")
        _, qs, _ = self._locals(point_mm)
        out = np.zeros(2)
        for i, c in enumerate(self.coils):
            b_loc = np.array(
                [
                    polyval2d(qs[i, 0], qs[i, 1], self._mono[i, 0]),
                    polyval2d(qs[i, 0], qs[i, 1], self._mono[i, 1]),
                ]
            )
            out += I[i] * (rot2(c.face_angle) @ b_loc)
        return out

    def eval_gradient(self, point_mm, currents) -> np.ndarray:
        """Spatial gradient (T/m): rows d(Bx, By), columns d(x, y)."""
        I = np.asarray(currents, dtype=float)
        _, qs, _ = self._locals(point_mm)
        out = np.zeros((2, 2))
        for i, c in enumerate(self.coils):
            g_loc = np.empty((2, 2))
            for comp in range(2):
                g_loc[comp, 0] = polyval2d(qs[i, 0], qs[i, 1], _mono_du(self._mono[i, comp]))
                g_loc[comp, 1] = polyval2d(qs[i, 0], qs[i, 1], _mono_dv(self._mono[i, comp]))
            R = rot2(c.face_angle)
            scale = 1.0 / (c.frame.rho_max * 1e-3)  # disk units -> per meter
            out += I[i] * scale * (R @ g_loc @ R.T)
        return out

    def eval_both(self, point_mm, currents) -> tuple[np.ndarray, np.ndarray]:
        return self.eval_field(point_mm, currents), self.eval_gradient(point_mm, currents)

    def divergence(self, point_mm, currents) -> float:
        """Planar divergence dBx/dx + dBy/dy (T/m)."""
        g = self.eval_gradient(point_mm, currents)
        return float(g[0, 0] + g[1, 1])

    def percoil(self, x_mm: float, y_mm: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-coil unit-current field (nc, 2) [T/A] and gradient (nc, 2, 2) [T/m/A]."""
        _, qs, _ = self._locals((x_mm, y_mm))
        B = np.empty((self.n_coils, 2))
        G = np.empty((self.n_coils, 2, 2))
        for i, c in enumerate(self.coils):
            b_loc = np.array(
                [
                    polyval2d(qs[i, 0], qs[i, 1], self._mono[i, 0]),
                    polyval2d(qs[i, 0], qs[i, 1], self._mono[i, 1]),
                ]
            )
            g_loc = np.empty((2, 2))
            for comp in range(2):
                g_loc[comp, 0] = polyval2d(qs[i, 0], qs[i, 1], _mono_du(self._mono[i, comp]))
                g_loc[comp, 1] = polyval2d(qs[i, 0], qs[i, 1], _mono_dv(self._mono[i, comp]))
            R = rot2(c.face_angle)
            B[i] = R @ b_loc
            G[i] = (R @ g_loc @ R.T) / (c.frame.rho_max * 1e-3)
        return B, G

    def packed(self) -> PackedField:
        """Kernel-ready arrays (SI units, local monomial coefficients)."""
        nc = self.n_coils
        deg = self._deg
        exps = [(i, j) for d in range(deg + 1) for i in range(d, -1, -1) for j in (d - i,)]
        nt = len(exps)
        coef_x = np.zeros((nc, nt))
        coef_y = np.zeros((nc, nt))
        for c in range(nc):
            for t, (i, j) in enumerate(exps):
                coef_x[c, t] = self._mono[c, 0, i, j]
                coef_y[c, t] = self._mono[c, 1, i, j]
        return PackedField(
            centers=np.array([np.asarray(c.frame.center) * 1e-3 for c in self.coils]),
            cos_a=np.array([np.cos(c.face_angle) for c in self.coils]),
            sin_a=np.array([np.sin(c.face_angle) for c in self.coils]),
            inv_rho=np.array([1.0 / (c.frame.rho_max * 1e-3) for c in self.coils]),
            coef_x=coef_x,
            coef_y=coef_y,
            pow_u=np.array([e[0] for e in exps], dtype=np.int32),
            pow_v=np.array([e[1] for e in exps], dtype=np.int32),
            max_deg=deg,
        )

    def to_json_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT_TAG,
            "coils": [
                {
                    "name": c.name,
                    "face": c.face,
                    "face_angle": c.face_angle,
                    "center": list(c.frame.center),
                    "rho_max": c.frame.rho_max,
                    "order": c.order,
                    "terms": term_indices(c.order),
                    "coef_bx": list(c.coef_bx),
                    "coef_by": list(c.coef_by),
                }
                for c in self.coils
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def from_json_dict(cls, d: dict) -> "ZernikeFieldModel":
        if d.get("format") != MODEL_FORMAT_TAG:
            raise ValueError(f"not a {MODEL_FORMAT_TAG} file")
        coils = []
        for c in d["coils"]:
            expected = [list(t) for t in term_indices(c["order"])]
            if [list(t) for t in c["terms"]] != expected:
                raise ValueError(f"term index list of coil {c['name']} out of convention")
            coils.append(
                CoilFieldFit(
                    name=c["name"],
                    face=c["face"],
                    face_angle=c["face_angle"],
                    frame=DiskFrame(center=tuple(c["center"]), rho_max=c["rho_max"]),
                    order=c["order"],
                    coef_bx=np.array(c["coef_bx"], dtype=float),
                    coef_by=np.array(c["coef_by"], dtype=float),
                )
            )
        return cls(coils=tuple(coils))

    @classmethod
    def load(cls, path) -> "ZernikeFieldModel":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def model_from_class_fits(
    class_fits: dict[str, tuple[np.ndarray, DiskFrame, int]],
    coil_order=COIL_ORDER,
) -> ZernikeFieldModel:
    """Replicate canonical (north-frame) class fits onto the four faces.

    ``class_fits`` maps size class -> (coeffs (2, nt), canonical frame,
    order).  The canonical frame center must lie on the +y axis.
    """
    coils = []
    for face, size in coil_order:
        coeffs, frame, order = class_fits[size]
        angle = FACE_ANGLES[face]
        center = rot2(angle) @ np.asarray(frame.center)
        coils.append(
            CoilFieldFit(
                name=f"{face}_{size}",
                face=face,
                face_angle=angle,
                frame=DiskFrame(center=(float(center[0]), float(center[1])), rho_max=frame.rho_max),
                order=order,
                coef_bx=coeffs[0].copy(),
                coef_by=coeffs[1].copy(),
            )
        )
    return ZernikeFieldModel(coils=tuple(coils))


def gradient_fd_check(
    model: ZernikeFieldModel,
    n_points: int = 1000,
    h_mm: float = 0.01,
    seed: int = 0,
    half_mm: float = 50.0,
) -> float:
    """Worst relative error of the analytic gradient vs central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        p = rng.uniform(-half_mm + 1, half_mm - 1, size=2)
        I = rng.uniform(-5.0, 5.0, size=model.n_coils)
        g = model.eval_gradient(p, I)
        fd = np.empty((2, 2))
        for j in range(2):
            dp = np.zeros(2)
            dp[j] = h_mm
            fd[:, j] = (model.eval_field(p + dp, I) - model.eval_field(p - dp, I)) / (
                2 * h_mm * 1e-3
            )
        denom = max(np.abs(fd).max(), 1e-30)
        worst = max(worst, float(np.abs(g - fd).max() / denom))
    return worst


def divergence_stats(
    model: ZernikeFieldModel,
    n_points: int = 1000,
    seed: int = 0,
    half_mm: float = 50.0,
) -> float:
    """RMS planar divergence over RMS gradient norm at random points."""
    rng = np.random.default_rng(seed)
    divs = np.empty(n_points)
    gnorms = np.empty(n_points)
    for i in range(n_points):
        p = rng.uniform(-half_mm, half_mm, size=2)
        I = rng.uniform(-5.0, 5.0, size=model.n_coils)
        g = model.eval_gradient(p, I)
        divs[i] = g[0, 0] + g[1, 1]
        gnorms[i] = np.sqrt((g**2).sum())
    return float(np.sqrt((divs**2).mean()) / np.sqrt((gnorms**2).mean()))
