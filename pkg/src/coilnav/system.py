"""Assembly of the standard eight-coil system and its field models.

One canonical (north-face) grid per coil class is sampled from the oracle;
the other faces reuse it by exact quarter-turn rotation.  From these come:

* the dense truth tables the plant integrates against,
* the coarser lookup tables the two-layer baselines allocate with, and
* the fitted analytic model (plus its kernel packing) the NMPC uses.

Building takes a couple of seconds, so results are cached per config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import field_oracle as fo
from . import zernike as zk

DEFAULT_ORDERS = (("small", 4), ("large", 3))


@dataclass(frozen=True)
class SystemConfig:
    """Hashable description of how to build the field models."""

    orders: tuple[tuple[str, int], ...] = DEFAULT_ORDERS
    plant_spacing_mm: float = 1.0
    plant_margin_mm: float = 6.0  # truth tables extend past the walls so
    # integrator sub-steps at the boundary stay inside the sampled hull
    lut_decimation: int = 2  # baseline tables at plant_spacing * decimation
    num_turns: int = fo.DEFAULT_NUM_TURNS

    def order_of(self, size_class: str) -> int:
        return dict(self.orders)[size_class]


@dataclass
class MagneticSystem:
    """Everything the controllers and the plant need about the coils."""

    config: SystemConfig
    coils: tuple[fo.CoilSpec, ...]
    zernike: zk.ZernikeFieldModel
    lookup: fo.LookupFieldModel
    plant_lookup: fo.LookupFieldModel
    class_grids: dict = field(repr=False, default_factory=dict)
    fit_reports: dict = field(repr=False, default_factory=dict)

    def packed(self):
        return self.zernike.packed()


_CACHE: dict[SystemConfig, MagneticSystem] = {}


def build_system(config: SystemConfig | None = None) -> MagneticSystem:
    """Sample, fit, and assemble the default coil system (cached)."""
    cfg = config or SystemConfig()
    if cfg in _CACHE:
        return _CACHE[cfg]

    coils = fo.default_coil_specs(num_turns=cfg.num_turns)
    canonical = {c.size_class: c for c in coils if c.stack_face == "north"}

    spacing = cfg.plant_spacing_mm
    margin_nodes = int(round(cfg.plant_margin_mm / spacing))
    half = fo.WORKSPACE_HALF_MM + margin_nodes * spacing
    n = int(round(2 * half / spacing)) + 1
    class_grids = {
        size: fo.sample_grid(spec, origin=(-half, -half), spacing=spacing, nx=n, ny=n)
        for size, spec in canonical.items()
    }

    plant_grids = []
    lut_grids = []
    for face, size in fo.COIL_ORDER:
        g = class_grids[size].rotated(fo.FACE_ANGLES[face])
        plant_grids.append(g)
        lut_grids.append(g.cropped(margin_nodes).decimated(cfg.lut_decimation))

    class_fits = {}
    fit_reports = {}
    for size, spec in canonical.items():
        order = cfg.order_of(size)
        frame = zk.DiskFrame(
            center=(0.0, spec.center_offset),
            rho_max=fo.COIL_CLASS_DEFAULTS[size]["rho_max"],
        )
        fit_grid = class_grids[size].cropped(margin_nodes).decimated(cfg.lut_decimation)
        coeffs, report = zk.fit(fit_grid, frame, order)
        class_fits[size] = (coeffs, frame, order)
        fit_reports[size] = report

    system = MagneticSystem(
        config=cfg,
        coils=coils,
        zernike=zk.model_from_class_fits(class_fits),
        lookup=fo.LookupFieldModel(lut_grids),
        plant_lookup=fo.LookupFieldModel(plant_grids),
        class_grids=class_grids,
        fit_reports=fit_reports,
    )
    _CACHE[cfg] = system
    return system
