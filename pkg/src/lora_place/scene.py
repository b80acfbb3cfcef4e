"""2.5D city scene: extruded building footprints, analysis grid, gateway sites.

Buildings are simple counter-clockwise polygons extruded from the ground plane
(z=0) up to ``height_m``. The analysis grid is a regular raster of receiver
cells; cell ``n`` maps to indices ``(i, j) = (n % nx, n // nx)`` with ``j``
(the y index) as the slow axis, and ``origin`` is the center of cell (0, 0).

The geometric queries here are the kernel for the direct-path propagation
model: segment/wall crossings for penetration loss and footprint boundary
hits for diffraction geometry. All objects are immutable after load and safe
for unrestricted concurrent reads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

# Tolerance (meters) for intersection-parameter and boundary comparisons.
EPS_GEOM = 1e-9

Point2 = tuple[float, float]
Point3 = tuple[float, float, float]


@dataclass(frozen=True)
class Material:
    """A radio material with a scalar per-wall penetration loss in dB."""

    name: str
    penetration_loss_db: float

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("material: empty name")
        loss = self.penetration_loss_db
        if not (math.isfinite(loss) and loss >= 0.0):
            raise ValidationError(
                f"material '{self.name}': penetration_loss_db must be finite and >= 0, "
                f"got {loss}"
            )


@dataclass
class Building:
    """An extruded footprint: simple CCW polygon at z=0 raised to height_m."""

    id: int
    footprint: tuple[Point2, ...]
    height_m: float
    material: str
    bbox: tuple[float, float, float, float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.footprint)
        self.footprint = pts
        tag = f"building {self.id}"
        if len(pts) < 3:
            raise ValidationError(f"{tag}: footprint needs >= 3 vertices, got {len(pts)}")
        if not all(math.isfinite(v) for xy in pts for v in xy):
            raise ValidationError(f"{tag}: non-finite footprint vertex")
        if not (math.isfinite(self.height_m) and self.height_m > 0.0):
            raise ValidationError(f"{tag}: height_m must be finite and > 0, got {self.height_m}")
        if not _polygon_is_simple(pts):
            raise ValidationError(f"{tag}: self-intersecting footprint")
        area = _signed_area(pts)
        if area <= EPS_GEOM**2:
            kind = "zero-area" if abs(area) <= EPS_GEOM**2 else "clockwise (must be CCW)"
            raise ValidationError(f"{tag}: {kind} footprint")
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        self.bbox = (min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class GatewaySite:
    """A candidate rooftop gateway position."""

    id: int
    name: str
    position: Point3

    def __post_init__(self) -> None:
        pos = tuple(float(v) for v in self.position)
        object.__setattr__(self, "position", pos)
        if not all(math.isfinite(v) for v in pos):
            raise ValidationError(f"site {self.id}: non-finite position")
        if pos[2] <= 0.0:
            raise ValidationError(f"site {self.id}: z must be > 0 (rooftop mount), got {pos[2]}")


@dataclass(frozen=True)
class GridSpec:
    """Regular receiver raster; origin is the center of cell (0, 0)."""

    origin: Point2
    dx: float
    dy: float
    nx: int
    ny: int
    rx_height_m: float = 1.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if not (self.dx > 0.0 and self.dy > 0.0):
            raise ValidationError(f"grid: dx and dy must be > 0, got ({self.dx}, {self.dy})")
        if not (self.nx >= 1 and self.ny >= 1):
            raise ValidationError(f"grid: nx and ny must be >= 1, got ({self.nx}, {self.ny})")
        if not all(math.isfinite(v) for v in (*self.origin, self.dx, self.dy, self.rx_height_m)):
            raise ValidationError("grid: non-finite parameter")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned scene rectangle in meters."""

    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self) -> None:
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise ValidationError("bounds: max must exceed min on both axes")

    def contains(self, x: float, y: float) -> bool:
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y


@dataclass
class Scene:
    """A validated city model plus its analysis grid."""

    materials: list[Material]
    buildings: list[Building]
    sites: list[GatewaySite]
    bounds: Bounds
    grid: GridSpec
    _materials_by_name: dict[str, Material] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_name: dict[str, Material] = {}
        for m in self.materials:
            if m.name in by_name:
                raise ValidationError(f"material '{m.name}': duplicate name")
            by_name[m.name] = m
        self._materials_by_name = by_name

        for b in self.buildings:
            if b.material not in by_name:
                raise ValidationError(f"building {b.id}: unresolved material '{b.material}'")
            for x, y in b.footprint:
                if not self.bounds.contains(x, y):
                    raise ValidationError(
                        f"building {b.id}: vertex ({x}, {y}) outside scene bounds"
                    )
        ids = sorted(s.id for s in self.sites)
        if ids != list(range(len(self.sites))):
            raise ValidationError(f"sites: ids must be dense 0..G-1, got {ids}")
        for s in self.sites:
            if not self.bounds.contains(s.position[0], s.position[1]):
                raise ValidationError(f"site {s.id}: position outside scene bounds")
        self.sites = sorted(self.sites, key=lambda s: s.id)

    def material(self, name: str) -> Material:
        return self._materials_by_name[name]

    @property
    def n_sites(self) -> int:
        return len(self.sites)


def cell_center(grid: GridSpec, n: int) -> Point3:
    """Center of cell ``n`` at receiver height; ``n = j * nx + i`` row-major."""
    if not 0 <= n < grid.n_cells:
        raise IndexError(f"cell index {n} out of range [0, {grid.n_cells})")
    j, i = divmod(n, grid.nx)
    return (grid.origin[0] + i * grid.dx, grid.origin[1] + j * grid.dy, grid.rx_height_m)


def cell_centers_xy(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flat arrays of all cell-center x and y coordinates in index order."""
    i = np.arange(grid.nx, dtype=np.float64)
    j = np.arange(grid.ny, dtype=np.float64)
    xs = grid.origin[0] + i * grid.dx
    ys = grid.origin[1] + j * grid.dy
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


# ---------------------------------------------------------------------------
# Geometry kernel
# ---------------------------------------------------------------------------

def _signed_area(pts: Sequence[Point2]) -> float:
    """Shoelace signed area; positive for counter-clockwise order."""
    total = 0.0
    m = len(pts)
    for k in range(m):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % m]
        total += ax * by - bx * ay
    return 0.5 * total


def _on_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> bool:
    """Whether point p lies within EPS_GEOM of segment a-b."""
    ex, ey = bx - ax, by - ay
    ll = ex * ex + ey * ey
    if ll == 0.0:
        dxp, dyp = px - ax, py - ay
        return dxp * dxp + dyp * dyp <= EPS_GEOM**2
    t = ((px - ax) * ex + (py - ay) * ey) / ll
    t = min(1.0, max(0.0, t))
    dxp = px - (ax + t * ex)
    dyp = py - (ay + t * ey)
    return dxp * dxp + dyp * dyp <= EPS_GEOM**2


def _segments_touch(p1: Point2, p2: Point2, p3: Point2, p4: Point2) -> bool:
    """Whether segments p1-p2 and p3-p4 share any point (within tolerance)."""
    d1x, d1y = p2[0] - p1[0], p2[1] - p1[1]
    d2x, d2y = p4[0] - p3[0], p4[1] - p3[1]
    denom = d1x * d2y - d1y * d2x
    apx, apy = p3[0] - p1[0], p3[1] - p1[1]
    if abs(denom) > 1e-14 * max(1.0, abs(d1x) + abs(d1y)) * max(1.0, abs(d2x) + abs(d2y)):
        t = (apx * d2y - apy * d2x) / denom
        s = (apx * d1y - apy * d1x) / denom
        return -1e-12 <= t <= 1.0 + 1e-12 and -1e-12 <= s <= 1.0 + 1e-12
    # parallel: touching only if collinear and overlapping
    return (
        _on_segment(*p3, *p1, *p2)
        or _on_segment(*p4, *p1, *p2)
        or _on_segment(*p1, *p3, *p4)
        or _on_segment(*p2, *p3, *p4)
    )


def _polygon_is_simple(pts: Sequence[Point2]) -> bool:
    """No repeated vertices, no spikes, no contact between non-adjacent edges."""
    m = len(pts)
    for k in range(m):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % m]
        if math.hypot(bx - ax, by - ay) <= EPS_GEOM:
            return False
    for k in range(m):
        a = pts[k]
        b = pts[(k + 1) % m]
        c = pts[(k + 2) % m]
        # spike: consecutive edges fold back on each other
        ux, uy = b[0] - a[0], b[1] - a[1]
        vx, vy = c[0] - b[0], c[1] - b[1]
        if abs(ux * vy - uy * vx) <= EPS_GEOM and ux * vx + uy * vy < 0.0:
            return False
    for ka in range(m):
        for kb in range(ka + 1, m):
            if kb == ka + 1 or (ka == 0 and kb == m - 1):
                continue
            if _segments_touch(pts[ka], pts[(ka + 1) % m], pts[kb], pts[(kb + 1) % m]):
                return False
    return True


def point_strictly_inside(pts: Sequence[Point2], x: float, y: float) -> bool:
    """Even-odd point-in-polygon test; boundary points (within EPS_GEOM) are outside."""
    m = len(pts)
    inside = False
    for k in range(m):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % m]
        if _on_segment(x, y, ax, ay, bx, by):
            return False
        if (ay > y) != (by > y):
            x_at = ax + (y - ay) / (by - ay) * (bx - ax)
            if x < x_at:
                inside = not inside
    return inside


def _footprint_crossing_params(b: Building, q0: Point2, q1: Point2) -> list[float]:
    """Parameters t where the 2D segment q0->q1 crosses the footprint boundary.

    Candidate edge intersections partition the segment; a crossing is a
    partition point where the inside/outside status of adjacent sub-segment
    midpoints flips. This resolves vertex hits and grazing contacts exactly as
    specified: a graze counts only when the mid-point between entry and exit
    lies strictly inside the footprint.
    """
    rx, ry = q1[0] - q0[0], q1[1] - q0[1]
    seg_len = math.hypot(rx, ry)
    if seg_len <= EPS_GEOM:
        return []
    t_tol = EPS_GEOM / seg_len
    pts = b.footprint
    m = len(pts)
    cand: list[float] = []
    for k in range(m):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % m]
        ex, ey = bx - ax, by - ay
        denom = rx * ey - ry * ex
        edge_len = math.hypot(ex, ey)
        if abs(denom) <= 1e-14 * seg_len * edge_len:
            continue  # parallel/collinear; interval midpoints resolve grazes
        apx, apy = ax - q0[0], ay - q0[1]
        t = (apx * ey - apy * ex) / denom
        s = (apx * ry - apy * rx) / denom
        s_tol = EPS_GEOM / edge_len
        if -t_tol <= t <= 1.0 + t_tol and -s_tol <= s <= 1.0 + s_tol:
            cand.append(min(1.0, max(0.0, t)))
    if not cand:
        return []
    cand.sort()
    cuts: list[float] = []
    for t in cand:
        if t <= t_tol or t >= 1.0 - t_tol:
            continue  # endpoint grazes never separate intervals
        if cuts and t - cuts[-1] <= t_tol:
            continue
        cuts.append(t)
    if not cuts:
        return []
    edges = [0.0, *cuts, 1.0]
    crossings: list[float] = []
    prev_inside = None
    for idx in range(len(edges) - 1):
        tm = 0.5 * (edges[idx] + edges[idx + 1])
        ins = point_strictly_inside(pts, q0[0] + tm * rx, q0[1] + tm * ry)
        if prev_inside is not None and ins != prev_inside:
            crossings.append(edges[idx])
        prev_inside = ins
    return crossings


def _bbox_may_intersect(b: Building, q0: Point2, q1: Point2) -> bool:
    x0, y0, x1, y1 = b.bbox
    lo_x, hi_x = (q0[0], q1[0]) if q0[0] <= q1[0] else (q1[0], q0[0])
    lo_y, hi_y = (q0[1], q1[1]) if q0[1] <= q1[1] else (q1[1], q0[1])
    return not (hi_x < x0 - EPS_GEOM or lo_x > x1 + EPS_GEOM
                or hi_y < y0 - EPS_GEOM or lo_y > y1 + EPS_GEOM)


def boundary_hits(scene: Scene, p0: Point3, p1: Point3) -> list[tuple[float, Building]]:
    """All footprint-boundary crossings of segment p0->p1, as (t, building).

    Crossings are reported regardless of the z coordinate at the hit; callers
    apply their own height filtering (walls for penetration, roof edges for
    diffraction). Sorted by t, i.e. by distance from p0.
    """
    if all(abs(a - b) <= 0.0 for a, b in zip(p0, p1)):
        raise ValueError("degenerate segment: p0 equals p1")
    q0 = (p0[0], p0[1])
    q1 = (p1[0], p1[1])
    hits: list[tuple[float, Building]] = []
    for b in scene.buildings:
        if not _bbox_may_intersect(b, q0, q1):
            continue
        for t in _footprint_crossing_params(b, q0, q1):
            hits.append((t, b))
    hits.sort(key=lambda h: (h[0], h[1].id))
    return hits


def wall_crossings(scene: Scene, p0: Point3, p1: Point3) -> list[tuple[int, str]]:
    """Vertical-wall crossings of segment p0->p1 as (building id, material name).

    A boundary hit counts as a wall crossing only when the segment's z at the
    hit lies strictly between the ground plane and the building roof; hits
    above the roof are roof-edge passes, not wall penetrations. Ordered by
    distance from p0.
    """
    z0, z1 = p0[2], p1[2]
    out: list[tuple[int, str]] = []
    for t, b in boundary_hits(scene, p0, p1):
        z = z0 + t * (z1 - z0)
        if 0.0 < z < b.height_m:
            out.append((b.id, b.material))
    return out


def building_interior_mask(scene: Scene, grid: GridSpec) -> np.ndarray:
    """Boolean mask (length N) of cells whose center is strictly inside a footprint."""
    xs, ys = cell_centers_xy(grid)
    mask = np.zeros(grid.n_cells, dtype=bool)
    for b in scene.buildings:
        x0, y0, x1, y1 = b.bbox
        near = (xs >= x0 - EPS_GEOM) & (xs <= x1 + EPS_GEOM) \
            & (ys >= y0 - EPS_GEOM) & (ys <= y1 + EPS_GEOM)
        for n in np.flatnonzero(near & ~mask):
            if point_strictly_inside(b.footprint, xs[n], ys[n]):
                mask[n] = True
    return mask


# ---------------------------------------------------------------------------
# Scene JSON loading
# ---------------------------------------------------------------------------

def _reject_unknown(obj: dict, allowed: Iterable[str], where: str) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown key '{sorted(unknown)[0]}'")


def _as_number(v: object, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _as_int(v: object, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{where}: expected an integer, got {v!r}")
    return v


def _as_pair(v: object, where: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValidationError(f"{where}: expected [x, y]")
    return (_as_number(v[0], where), _as_number(v[1], where))


def scene_from_dict(data: dict) -> Scene:
    """Build and validate a Scene from parsed scene-JSON data."""
    if not isinstance(data, dict):
        raise ValidationError("scene JSON: top level must be an object")
    _reject_unknown(data, ("materials", "buildings", "sites", "bounds", "grid"), "scene JSON")
    for key in ("materials", "buildings", "sites", "bounds", "grid"):
        if key not in data:
            raise ValidationError(f"scene JSON: missing key '{key}'")

    materials = []
    for idx, m in enumerate(data["materials"]):
        where = f"materials[{idx}]"
        _reject_unknown(m, ("name", "penetration_loss_db"), where)
        materials.append(Material(
            name=str(m.get("name", "")),
            penetration_loss_db=_as_number(m.get("penetration_loss_db"), where),
        ))

    buildings = []
    for idx, b in enumerate(data["buildings"]):
        where = f"buildings[{idx}]"
        _reject_unknown(b, ("id", "footprint", "height_m", "material"), where)
        fp = b.get("footprint")
        if not isinstance(fp, list):
            raise ValidationError(f"{where}: footprint must be a list of [x, y]")
        buildings.append(Building(
            id=_as_int(b.get("id"), where),
            footprint=tuple(_as_pair(p, f"{where}.footprint[{k}]") for k, p in enumerate(fp)),
            height_m=_as_number(b.get("height_m"), where),
            material=str(b.get("material", "")),
        ))

    sites = []
    for idx, s in enumerate(data["sites"]):
        where = f"sites[{idx}]"
        _reject_unknown(s, ("id", "name", "position"), where)
        pos = s.get("position")
        if not isinstance(pos, (list, tuple)) or len(pos) != 3:
            raise ValidationError(f"{where}: position must be [x, y, z]")
        sites.append(GatewaySite(
            id=_as_int(s.get("id"), where),
            name=str(s.get("name", "")),
            position=tuple(_as_number(v, where) for v in pos),
        ))

    bd = data["bounds"]
    _reject_unknown(bd, ("min", "max"), "bounds")
    bmin = _as_pair(bd.get("min"), "bounds.min")
    bmax = _as_pair(bd.get("max"), "bounds.max")
    bounds = Bounds(bmin[0], bmin[1], bmax[0], bmax[1])

    g = data["grid"]
    _reject_unknown(g, ("origin", "dx", "dy", "nx", "ny", "rx_height_m"), "grid")
    grid = GridSpec(
        origin=_as_pair(g.get("origin"), "grid.origin"),
        dx=_as_number(g.get("dx"), "grid"),
        dy=_as_number(g.get("dy"), "grid"),
        nx=_as_int(g.get("nx"), "grid"),
        ny=_as_int(g.get("ny"), "grid"),
        rx_height_m=_as_number(g.get("rx_height_m", 1.5), "grid"),
    )

    return Scene(materials=materials, buildings=buildings, sites=sites,
                 bounds=bounds, grid=grid)


def load_scene(path: str | Path) -> Scene:
    """Load and validate a scene JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scene JSON parse error in {path}: {exc}") from exc
    return scene_from_dict(data)


def example_scene_path(name: str = "manhattan_3x3") -> Path:
    """Path to a scene bundled with the package."""
    return Path(str(resources.files("lora_place").joinpath("data", f"{name}.json")))
