"""Hot-loop engines: compiled extension core with a pure-NumPy fallback.

The controller's inner loop (RK4 rollouts and their adjoint gradients
through the polynomial field model) dominates runtime, so it has two
interchangeable implementations:

* ``_core`` -- a Cython extension operating on :class:`PackedField`
  arrays; used when the build produced it.
* ``reference`` -- a NumPy implementation of the same contract, which also
  accepts arbitrary field adapters (e.g. interpolated lookup tables).

Selection happens at import time and can be forced with the environment
variable ``COILNAV_BACKEND`` set to ``compiled`` or ``python``.  Run
``coilnav bench`` for a side-by-side timing of both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    from . import _core as _compiled
except ImportError:  # extension not built; fall back to NumPy
    _compiled = None

# Kernel parameter-vector layouts shared by both engines.
PARAMS_LEN = 8  # [mass, J, moment, axis_u, axis_v, d_par, d_perp, d_r]
# [Qp00, Qp01, Qp11, q_th, P00, P01, P11, q_thN, ws_w, xmin, xmax, ymin, ymax,
#  field_anchor_w, field_anchor_T]
WEIGHTS_LEN = 15


@dataclass(frozen=True)
class PackedField:
    """Field model flattened for the kernels (SI units).

    Per coil: workspace center (m), face rotation (cos/sin), inverse disk
    radius (1/m), and monomial coefficients of both field components in
    disk-local coordinates.  ``pow_u``/``pow_v`` list the exponent of every
    monomial column.
    """

    centers: np.ndarray
    cos_a: np.ndarray
    sin_a: np.ndarray
    inv_rho: np.ndarray
    coef_x: np.ndarray
    coef_y: np.ndarray
    pow_u: np.ndarray
    pow_v: np.ndarray
    max_deg: int

    def __post_init__(self):
        for name in ("centers", "cos_a", "sin_a", "inv_rho", "coef_x", "coef_y"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        for name in ("pow_u", "pow_v"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.int32))

    @property
    def n_coils(self) -> int:
        return self.centers.shape[0]

    @property
    def n_terms(self) -> int:
        return self.pow_u.shape[0]


def compiled_available() -> bool:
    return _compiled is not None


def default_backend() -> str:
    forced = os.environ.get("COILNAV_BACKEND", "auto")
    if forced == "python":
        return "python"
    if forced == "compiled":
        if _compiled is None:
            raise RuntimeError("COILNAV_BACKEND=compiled but the extension is not built")
        return "compiled"
    return "compiled" if _compiled is not None else "python"


def make_engine(field, backend: str = "auto"):
    """Bind a field model to a rollout engine.

    ``field`` is either a :class:`PackedField` (eligible for the compiled
    core) or any adapter exposing ``n_coils``, ``percoil_si`` and
    ``percoil_hess_si``.
    """
    from . import reference

    if backend == "auto":
        backend = default_backend() if isinstance(field, PackedField) else "python"
    if isinstance(field, PackedField):
        if backend == "compiled":
            if _compiled is None:
                raise RuntimeError("compiled backend requested but unavailable")
            return _compiled.CompiledEngine(field)
        return reference.PythonEngine(reference.PackedAdapter(field))
    if backend == "compiled":
        raise RuntimeError("compiled backend supports PackedField models only")
    return reference.PythonEngine(field)
