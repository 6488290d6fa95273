"""Ground-truth magnetic field surrogate and interpolated lookup tables.

The physical system is a square workspace (100 mm edge) surrounded by four
coil stacks, one per lateral face, each stack holding a small and a large
coil.  Here every coil is modelled by the cross-section its winding cuts
through the horizontal workspace plane: a bundle of straight conductor
pairs perpendicular to the plane, carrying opposite currents.  The in-plane
field of such a bundle is the closed-form Biot-Savart field of straight
wires; it is smooth, exactly divergence-free in the plane, and has a
known on-axis formula to test against.

Unit-current fields (tesla per ampere) sampled on regular grids stand in
for the FEA data the analytic field model is fitted to, and double as the
lookup tables the two-layer baseline controllers interpolate at runtime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .angles import rot2

MU0 = 4.0e-7 * np.pi

WORKSPACE_HALF_MM = 50.0

# Face normal angles relative to the canonical (north, +y) coil frame.
FACE_ANGLES = {
    "north": 0.0,
    "east": -np.pi / 2.0,
    "south": np.pi,
    "west": np.pi / 2.0,
}

# Fixed coil ordering for current vectors: face-major, class-minor.
COIL_ORDER: tuple[tuple[str, str], ...] = tuple(
    (face, size) for face in ("north", "east", "south", "west") for size in ("small", "large")
)

# Coil-center offsets and fit-disk radii (mm).  The surrogate winding
# geometry (lateral radius, turns, cross-section extents) is free: the
# values below were chosen so the sampled fields are smooth enough for
# low-order polynomial fits while keeping every conductor outside the
# workspace.
COIL_CLASS_DEFAULTS = {
    "small": dict(center_offset=57.69, rho_max=118.731, loop_radius=91.0),
    "medium": dict(center_offset=71.295, rho_max=136.186, loop_radius=70.0),
    "large": dict(center_offset=90.925, rho_max=165.341, loop_radius=60.0),
}

DEFAULT_NUM_TURNS = 100
DEFAULT_AXIAL_EXTENT_MM = 10.0
DEFAULT_RADIAL_EXTENT_MM = 10.0

GRID_FORMAT_TAG = "coilnav-grid-v1"


class SingularEvaluationError(ValueError):
    """Field requested at a point coincident with a conductor."""


class OutOfBoundsError(ValueError):
    """Lookup-table evaluation outside the sampled hull."""


@dataclass(frozen=True)
class CoilSpec:
    """Geometry of one coil's winding cross-section in the workspace plane.

    Attributes
    ----------
    stack_face : str
        Which lateral face the coil sits on (north/east/south/west).
    size_class : str
        small / medium / large.
    center_offset : float
        Distance (mm) from the workspace origin to the coil center along
        the face normal.
    loop_radius : float
        Lateral half-separation (mm) of the conductor pair.
    num_turns : int
        Number of conductor pairs in the bundle.
    axial_extent : float
        Spread (mm) of the bundle along the face normal.
    radial_extent : float
        Spread (mm) of the bundle in the lateral direction (winding depth).
    """

    stack_face: str
    size_class: str
    center_offset: float
    loop_radius: float
    num_turns: int = DEFAULT_NUM_TURNS
    axial_extent: float = DEFAULT_AXIAL_EXTENT_MM
    radial_extent: float = DEFAULT_RADIAL_EXTENT_MM

    def __post_init__(self):
        if self.stack_face not in FACE_ANGLES:
            raise ValueError(f"unknown stack_face {self.stack_face!r}")
        if self.num_turns < 1:
            raise ValueError("num_turns must be >= 1")
        if self.loop_radius <= 0.0:
            raise ValueError("loop_radius must be positive")
        if self.center_offset <= WORKSPACE_HALF_MM:
            raise ValueError("coil center must lie outside the workspace")

    @property
    def face_angle(self) -> float:
        return FACE_ANGLES[self.stack_face]

    @property
    def center(self) -> np.ndarray:
        """Coil center (mm) in workspace coordinates."""
        return rot2(self.face_angle) @ np.array([0.0, self.center_offset])

    def conductor_layout(self) -> tuple[np.ndarray, np.ndarray]:
        """Conductor positions (n, 2) in mm and their current signs (n,).

        The canonical (north) layout places ``num_turns`` pairs on a
        near-square grid spanning ``radial_extent x axial_extent`` around
        ``(+-loop_radius, center_offset)``; other faces are rotations of it.
        Positive sign means current out of the plane.
        """
        n_ax = max(1, int(round(np.sqrt(self.num_turns))))
        n_rad = int(np.ceil(self.num_turns / n_ax))
        ax_off = (
            np.linspace(-0.5, 0.5, n_ax) * self.axial_extent if n_ax > 1 else np.zeros(1)
        )
        rad_off = (
            np.linspace(-0.5, 0.5, n_rad) * self.radial_extent if n_rad > 1 else np.zeros(1)
        )
        pos = []
        signs = []
        count = 0
        for da in ax_off:
            for dr in rad_off:
                if count >= self.num_turns:
                    break
                r = self.loop_radius + dr
                y = self.center_offset + da
                # +z current on the -x conductor, -z on +x: unit field points
                # along +y (toward the coil) on the axis.
                pos.append((-r, y))
                signs.append(+1.0)
                pos.append((r, y))
                signs.append(-1.0)
                count += 1
        xy = np.array(pos)
        xy = xy @ rot2(self.face_angle).T
        return xy, np.array(signs)


def default_coil_specs(**overrides) -> tuple[CoilSpec, ...]:
    """The eight active coils (small + large on each face) in COIL_ORDER."""
    specs = []
    for face, size in COIL_ORDER:
        cls = COIL_CLASS_DEFAULTS[size]
        specs.append(
            CoilSpec(
                stack_face=face,
                size_class=size,
                center_offset=cls["center_offset"],
                loop_radius=cls["loop_radius"],
                **overrides,
            )
        )
    return tuple(specs)


def biot_savart_unit_field(coil: CoilSpec, point_mm) -> np.ndarray:
    """In-plane unit-current field (Bx, By) in T/A at ``point_mm``.

    Sums the closed-form Biot-Savart field of every straight conductor in
    the bundle.  The out-of-plane component vanishes identically because
    the conductors are perpendicular to the plane.

    Raises
    ------
    SingularEvaluationError
        If the point coincides with a conductor.
    """
    p = np.asarray(point_mm, dtype=float)
    xy, signs = coil.conductor_layout()
    d = (p - xy) * 1e-3  # meters
    r2 = (d**2).sum(axis=1)
    if np.any(r2 < 1e-18):
        raise SingularEvaluationError(f"field evaluation on a conductor at {p} mm")
    coef = MU0 * signs / (2.0 * np.pi * r2)
    bx = float(np.sum(coef * (-d[:, 1])))
    by = float(np.sum(coef * d[:, 0]))
    return np.array([bx, by])


def on_axis_pair_field(loop_radius_mm: float, distance_mm: float) -> float:
    """Closed-form on-axis field magnitude of one conductor pair, T per A-turn.

    For a pair at lateral offset ``+-R`` seen from an axial distance ``d``,
    the field is axial with magnitude ``mu0 R / (pi (R^2 + d^2))``.
    """
    r = loop_radius_mm * 1e-3
    d = distance_mm * 1e-3
    return MU0 * r / (np.pi * (r * r + d * d))


@dataclass(frozen=True)
class FieldSampleGrid:
    """Unit-current field samples on a regular grid.

    ``bx[i, j]`` holds the x-component at ``origin + (i*spacing, j*spacing)``.
    ``meta`` optionally records the coil the samples came from.
    """

    origin: tuple[float, float]
    spacing: float
    nx: int
    ny: int
    bx: np.ndarray
    by: np.ndarray
    meta: dict | None = None

    def __post_init__(self):
        for arr in (self.bx, self.by):
            if arr.shape != (self.nx, self.ny):
                raise ValueError("grid arrays must have shape (nx, ny)")
            if not np.all(np.isfinite(arr)):
                raise ValueError("grid contains non-finite values")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + self.spacing * np.arange(self.nx)
        ys = self.origin[1] + self.spacing * np.arange(self.ny)
        return xs, ys

    def points(self) -> np.ndarray:
        """(nx*ny, 2) node coordinates in mm, x-major order."""
        xs, ys = self.node_coords()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def values(self) -> np.ndarray:
        """(nx*ny, 2) field samples matching :meth:`points` order."""
        return np.stack([self.bx.ravel(), self.by.ravel()], axis=1)

    def rotated(self, face_angle: float) -> "FieldSampleGrid":
        """Grid of the same coil mounted on a face rotated by ``face_angle``.

        Only quarter-turn angles are supported; nodes map exactly onto
        nodes, so the result is bit-identical to re-sampling the rotated
        coil.  Requires a grid centered on the origin.
        """
        k = int(round(face_angle / (np.pi / 2.0))) % 4
        if not np.isclose(face_angle % (2 * np.pi), (k * np.pi / 2.0) % (2 * np.pi)):
            raise ValueError("rotated() supports quarter-turn angles only")
        cx = self.origin[0] + self.spacing * (self.nx - 1) / 2.0
        cy = self.origin[1] + self.spacing * (self.ny - 1) / 2.0
        if abs(cx) > 1e-9 or abs(cy) > 1e-9 or self.nx != self.ny:
            raise ValueError("rotated() requires a square origin-centered grid")
        bx, by = self.bx, self.by
        for _ in range(k):
            # One CCW quarter turn: the value at p' = R(90) p is R(90) B(p);
            # with (x', y') = (-y, x) that reads old index (j', n-1-i'),
            # which is exactly np.rot90 on each component array.
            bx, by = -np.rot90(by), np.rot90(bx)
        return replace(self, bx=bx.copy(), by=by.copy())

    def decimated(self, step: int) -> "FieldSampleGrid":
        """Every ``step``-th node (used to derive coarser lookup tables)."""
        if (self.nx - 1) % step or (self.ny - 1) % step:
            raise ValueError("grid extent not divisible by the decimation step")
        return replace(
            self,
            spacing=self.spacing * step,
            nx=(self.nx - 1) // step + 1,
            ny=(self.ny - 1) // step + 1,
            bx=self.bx[::step, ::step].copy(),
            by=self.by[::step, ::step].copy(),
        )

    def cropped(self, margin_nodes: int) -> "FieldSampleGrid":
        """Drop ``margin_nodes`` rings of nodes from every edge."""
        m = margin_nodes
        if m <= 0:
            return self
        if self.nx - 2 * m < 2 or self.ny - 2 * m < 2:
            raise ValueError("crop leaves too few nodes")
        return replace(
            self,
            origin=(self.origin[0] + m * self.spacing, self.origin[1] + m * self.spacing),
            nx=self.nx - 2 * m,
            ny=self.ny - 2 * m,
            bx=self.bx[m:-m, m:-m].copy(),
            by=self.by[m:-m, m:-m].copy(),
        )

    def to_json_dict(self) -> dict:
        return {
            "format": GRID_FORMAT_TAG,
            "origin": list(self.origin),
            "spacing": self.spacing,
            "nx": self.nx,
            "ny": self.ny,
            "meta": self.meta,
            "bx": [list(row) for row in self.bx],
            "by": [list(row) for row in self.by],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def from_json_dict(cls, d: dict) -> "FieldSampleGrid":
        if d.get("format") != GRID_FORMAT_TAG:
            raise ValueError(f"not a {GRID_FORMAT_TAG} file")
        return cls(
            origin=tuple(d["origin"]),
            spacing=d["spacing"],
            nx=d["nx"],
            ny=d["ny"],
            bx=np.array(d["bx"], dtype=float),
            by=np.array(d["by"], dtype=float),
            meta=d.get("meta"),
        )

    @classmethod
    def load(cls, path) -> "FieldSampleGrid":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def sample_grid(
    coil: CoilSpec,
    origin=(-WORKSPACE_HALF_MM, -WORKSPACE_HALF_MM),
    spacing: float = 2.0,
    nx: int = 51,
    ny: int = 51,
) -> FieldSampleGrid:
    """Evaluate the unit-current field of ``coil`` on a regular grid.

    Deterministic for a fixed spec; vectorized over nodes.
    """
    xs = origin[0] + spacing * np.arange(nx)
    ys = origin[1] + spacing * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    xy, signs = coil.conductor_layout()
    bx = np.zeros(pts.shape[0])
    by = np.zeros(pts.shape[0])
    for (wx, wy), s in zip(xy, signs):
        dx = (pts[:, 0] - wx) * 1e-3
        dy = (pts[:, 1] - wy) * 1e-3
        r2 = dx * dx + dy * dy
        if np.any(r2 < 1e-18):
            raise SingularEvaluationError("grid node coincides with a conductor")
        coef = MU0 * s / (2.0 * np.pi * r2)
        bx += coef * (-dy)
        by += coef * dx
    return FieldSampleGrid(
        origin=(float(origin[0]), float(origin[1])),
        spacing=float(spacing),
        nx=nx,
        ny=ny,
        bx=bx.reshape(nx, ny),
        by=by.reshape(nx, ny),
        meta={
            "stack_face": coil.stack_face,
            "size_class": coil.size_class,
            "center_offset": coil.center_offset,
            "loop_radius": coil.loop_radius,
            "num_turns": coil.num_turns,
            "axial_extent": coil.axial_extent,
            "radial_extent": coil.radial_extent,
        },
    )


class LookupFieldModel:
    """Bilinear-interpolated per-coil field tables with gradient tables.

    Serves two roles: the current allocator of the two-layer baselines and
    the table-driven field model of the table-based NMPC variant.  Gradient
    tables are precomputed at the nodes by central differences (one-sided
    at the edges), which is the "precomputed Jacobians" scheme; second
    spatial derivatives come from differentiating the bilinear gradient
    interpolant inside each cell.
    """

    def __init__(self, grids: "list[FieldSampleGrid] | tuple[FieldSampleGrid, ...]"):
        if not grids:
            raise ValueError("need at least one grid")
        g0 = grids[0]
        for g in grids:
            if (g.origin, g.spacing, g.nx, g.ny) != (g0.origin, g0.spacing, g0.nx, g0.ny):
                raise ValueError("all coil grids must share geometry")
        self.grids = tuple(grids)
        self.n_coils = len(grids)
        self.origin = np.array(g0.origin)
        self.spacing = g0.spacing
        self.nx, self.ny = g0.nx, g0.ny
        h = self.spacing * 1e-3  # meters
        # field[c, comp, ix, iy], grad[c, comp, axis, ix, iy]  (T, T/m)
        self.field = np.stack([np.stack([g.bx, g.by]) for g in grids])
        self.grad = np.empty((self.n_coils, 2, 2, self.nx, self.ny))
        for c in range(self.n_coils):
            for comp in range(2):
                self.grad[c, comp, 0] = np.gradient(self.field[c, comp], h, axis=0)
                self.grad[c, comp, 1] = np.gradient(self.field[c, comp], h, axis=1)

    def _cell(self, point_mm):
        p = np.asarray(point_mm, dtype=float)
        f = (p - self.origin) / self.spacing
        if f[0] < 0 or f[1] < 0 or f[0] > self.nx - 1 or f[1] > self.ny - 1:
            raise OutOfBoundsError(f"point {p} mm outside the sampled hull")
        ix = min(int(f[0]), self.nx - 2)
        iy = min(int(f[1]), self.ny - 2)
        tx = f[0] - ix
        ty = f[1] - iy
        return ix, iy, tx, ty

    def _interp(self, table, ix, iy, tx, ty):
        """Bilinear interpolation of table[..., ix:ix+2, iy:iy+2]."""
        f00 = table[..., ix, iy]
        f10 = table[..., ix + 1, iy]
        f01 = table[..., ix, iy + 1]
        f11 = table[..., ix + 1, iy + 1]
        return (
            f00 * (1 - tx) * (1 - ty)
            + f10 * tx * (1 - ty)
            + f01 * (1 - tx) * ty
            + f11 * tx * ty
        )

    def percoil(self, x_mm: float, y_mm: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-coil unit-current field (n, 2) and gradient (n, 2, 2)."""
        ix, iy, tx, ty = self._cell((x_mm, y_mm))
        B = self._interp(self.field, ix, iy, tx, ty)
        G = self._interp(self.grad, ix, iy, tx, ty)
        return B, G

    def percoil_hess(self, x_mm: float, y_mm: float) -> np.ndarray:
        """Per-coil second derivatives (n, 2, 2, 2): d2B_i / dx_j dx_k."""
        ix, iy, tx, ty = self._cell((x_mm, y_mm))
        h = self.spacing * 1e-3
        g = self.grad[..., ix : ix + 2, iy : iy + 2]
        ddx = ((g[..., 1, 0] - g[..., 0, 0]) * (1 - ty) + (g[..., 1, 1] - g[..., 0, 1]) * ty) / h
        ddy = ((g[..., 0, 1] - g[..., 0, 0]) * (1 - tx) + (g[..., 1, 1] - g[..., 1, 0]) * tx) / h
        return np.stack([ddx, ddy], axis=-1)

    def eval(self, point_mm, currents) -> np.ndarray:
        """Superposed field (T) at ``point_mm`` for the given coil currents."""
        I = np.asarray(currents, dtype=float)
        if I.shape != (self.n_coils,):
            raise ValueError(f"expected {self.n_coils} currents")
        ix, iy, tx, ty = self._cell(point_mm)
        B = self._interp(self.field, ix, iy, tx, ty)
        return I @ B

    def eval_with_grad(self, point_mm, currents) -> tuple[np.ndarray, np.ndarray]:
        """Field (T) and spatial gradient (T/m) at ``point_mm``."""
        I = np.asarray(currents, dtype=float)
        B, G = self.percoil(point_mm[0], point_mm[1])
        return I @ B, np.einsum("c,cij->ij", I, G)

    # Aliases matching the field-model protocol the dynamics code uses.
    def eval_field(self, point_mm, currents) -> np.ndarray:
        return self.eval(point_mm, currents)

    def eval_gradient(self, point_mm, currents) -> np.ndarray:
        I = np.asarray(currents, dtype=float)
        _, G = self.percoil(point_mm[0], point_mm[1])
        return np.einsum("c,cij->ij", I, G)


def lookup_eval(model: LookupFieldModel, point_mm, currents) -> np.ndarray:
    """Functional alias for :meth:`LookupFieldModel.eval`."""
    return model.eval(point_mm, currents)
