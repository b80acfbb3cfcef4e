"""Per-gateway path-gain grids: deterministic direct-path model plus file I/O.

The built-in model combines free-space path loss, a per-wall penetration loss
for every wall the direct segment crosses, and (optionally) a single
knife-edge diffraction term for the most obstructing roof edge along the
link. Externally computed grids (e.g. from a full ray tracer) can be imported
from the PGG1 binary format or a plain CSV raster instead.

Cells are evaluated independently, so results are bitwise identical for any
evaluation order. Unreachable cells carry the NO_PATH_DB sentinel.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import FormatError, ValidationError
from .scene import GatewaySite, GridSpec, Scene, boundary_hits, cell_center

SPEED_OF_LIGHT_M_S = 299_792_458.0

# Sentinel gain (dB) for cells with no usable propagation path.
NO_PATH_DB = -1000.0

# Total excess loss (penetration + diffraction) beyond which a cell is NO_PATH.
MAX_EXCESS_LOSS_DB = 500.0

# 20 log10(4 pi / c); FSPL(d, f) = -gain = 20 log10(d) + 20 log10(f) + this.
_FSPL_CONST_DB = 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT_M_S)

_PGG1_MAGIC = b"PGG1"
_PGG1_HEADER = struct.Struct("<4sIIIdd")  # magic, nx, ny, site_id, dx, dy


@dataclass(frozen=True)
class PropagationConfig:
    """Direct-path model settings; carrier defaults to the 1 GHz proxy."""

    carrier_hz: float = 1.0e9
    knife_edge_enabled: bool = True
    min_distance_m: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.carrier_hz) and self.carrier_hz > 0.0):
            raise ValidationError(f"carrier_hz must be finite and > 0, got {self.carrier_hz}")
        if not (math.isfinite(self.min_distance_m) and self.min_distance_m >= 0.1):
            raise ValidationError(f"min_distance_m must be >= 0.1, got {self.min_distance_m}")


@dataclass
class PathGainMap:
    """Large-scale path gain in dB from one site to every grid cell."""

    site_id: int
    grid: GridSpec
    gains_db: np.ndarray
    provenance: Literal["computed", "imported"]

    def __post_init__(self) -> None:
        self.gains_db = np.asarray(self.gains_db, dtype=np.float64)
        if self.gains_db.shape != (self.grid.n_cells,):
            raise ValidationError(
                f"path gain map: expected {self.grid.n_cells} values, got {self.gains_db.shape}"
            )
        if self.provenance not in ("computed", "imported"):
            raise ValidationError(f"path gain map: bad provenance '{self.provenance}'")
        bad = ~(np.isfinite(self.gains_db) | (self.gains_db == NO_PATH_DB))
        if bad.any():
            raise ValidationError(
                f"path gain map: non-finite gain at cell {int(np.flatnonzero(bad)[0])}"
            )


def free_space_path_gain(distance_m: float, carrier_hz: float) -> float:
    """Free-space path gain in dB (negative of FSPL), strictly decreasing in distance."""
    if not distance_m > 0.0:
        raise ValueError(f"distance_m must be > 0, got {distance_m}")
    if not carrier_hz > 0.0:
        raise ValueError(f"carrier_hz must be > 0, got {carrier_hz}")
    return -(20.0 * math.log10(distance_m) + 20.0 * math.log10(carrier_hz) + _FSPL_CONST_DB)


def knife_edge_loss(nu: float) -> float:
    """Single knife-edge diffraction loss in dB for Fresnel parameter nu.

    Zero below the clearance threshold nu <= -0.78, continuous and
    non-decreasing above it.
    """
    if not math.isfinite(nu):
        raise ValueError(f"nu must be finite, got {nu}")
    if nu <= -0.78:
        return 0.0
    return 6.9 + 20.0 * math.log10(math.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1)


def _worst_fresnel_nu(hits, p0, p1, dist_3d: float, wavelength_m: float) -> float | None:
    """Largest Fresnel parameter over the roof edges crossed by the segment.

    Each footprint boundary hit marks a roof edge at the building height; the
    obstruction height is measured against the straight line from p0 to p1 in
    the vertical plane of the link.
    """
    if not hits:
        return None
    z0, z1 = p0[2], p1[2]
    nu_star = -math.inf
    for t, b in hits:
        h = b.height_m - (z0 + t * (z1 - z0))
        d1 = max(t * dist_3d, 1e-3)
        d2 = max((1.0 - t) * dist_3d, 1e-3)
        nu = h * math.sqrt(2.0 / wavelength_m * (1.0 / d1 + 1.0 / d2))
        if nu > nu_star:
            nu_star = nu
    return nu_star


def compute_path_gain_map(
    scene: Scene,
    site: GatewaySite,
    grid: GridSpec,
    cfg: PropagationConfig,
) -> PathGainMap:
    """Direct-path gain from ``site`` to every cell of ``grid``.

    Per cell: FSPL at the (clamped) 3D distance, minus the material
    penetration loss of every wall crossing, minus the knife-edge loss of the
    single most obstructing roof edge when enabled. Cells whose total excess
    loss exceeds MAX_EXCESS_LOSS_DB become NO_PATH_DB.
    """
    if site.id not in {s.id for s in scene.sites}:
        raise ValueError(f"site {site.id} not in scene")
    loss_by_building = {
        b.id: scene.material(b.material).penetration_loss_db for b in scene.buildings
    }
    wavelength_m = SPEED_OF_LIGHT_M_S / cfg.carrier_hz
    sx, sy, sz = site.position
    gains = np.empty(grid.n_cells, dtype=np.float64)
    for n in range(grid.n_cells):
        px, py, pz = cell_center(grid, n)
        dist = math.sqrt((sx - px) ** 2 + (sy - py) ** 2 + (sz - pz) ** 2)
        fspl_gain = free_space_path_gain(max(dist, cfg.min_distance_m), cfg.carrier_hz)
        excess = 0.0
        if scene.buildings and dist > 0.0:
            hits = boundary_hits(scene, site.position, (px, py, pz))
            for t, b in hits:
                z = sz + t * (pz - sz)
                if 0.0 < z < b.height_m:
                    excess += loss_by_building[b.id]
            if cfg.knife_edge_enabled:
                nu = _worst_fresnel_nu(hits, site.position, (px, py, pz), dist, wavelength_m)
                if nu is not None:
                    excess += knife_edge_loss(nu)
        gains[n] = NO_PATH_DB if excess > MAX_EXCESS_LOSS_DB else fspl_gain - excess
    return PathGainMap(site_id=site.id, grid=grid, gains_db=gains, provenance="computed")


# ---------------------------------------------------------------------------
# PGG1 / CSV file I/O
# ---------------------------------------------------------------------------

def export_path_gain_map(pmap: PathGainMap, path: str | Path) -> None:
    """Write a PGG1 binary file; import of the result reproduces the map at float32."""
    header = _PGG1_HEADER.pack(
        _PGG1_MAGIC, pmap.grid.nx, pmap.grid.ny, pmap.site_id, pmap.grid.dx, pmap.grid.dy
    )
    payload = np.asarray(pmap.gains_db, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def _check_dims(nx: int, ny: int, grid: GridSpec, path) -> None:
    if (nx, ny) != (grid.nx, grid.ny):
        raise FormatError(
            f"{path}: dimension mismatch, file {nx}x{ny} vs grid {grid.nx}x{grid.ny}"
        )


def _import_pgg1(data: bytes, grid: GridSpec, site_id: int, path) -> PathGainMap:
    if len(data) < _PGG1_HEADER.size:
        raise FormatError(f"{path}: short read, truncated header")
    magic, nx, ny, _file_site, dx, dy = _PGG1_HEADER.unpack_from(data)
    if magic != _PGG1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    _check_dims(nx, ny, grid, path)
    for got, want, name in ((dx, grid.dx, "dx"), (dy, grid.dy, "dy")):
        if abs(got - want) > 1e-9 * max(1.0, abs(want)):
            raise FormatError(f"{path}: {name} mismatch, file {got} vs grid {want}")
    expect = _PGG1_HEADER.size + 4 * nx * ny
    if len(data) < expect:
        raise FormatError(f"{path}: short read, {len(data)} bytes, expected {expect}")
    if len(data) > expect:
        raise FormatError(f"{path}: trailing bytes, {len(data)} bytes, expected {expect}")
    raw = np.frombuffer(data, dtype="<f4", count=nx * ny, offset=_PGG1_HEADER.size)
    gains = raw.astype(np.float64)
    gains[~np.isfinite(gains)] = NO_PATH_DB
    return PathGainMap(site_id=site_id, grid=grid, gains_db=gains, provenance="imported")


def _import_csv(text: str, grid: GridSpec, site_id: int, path) -> PathGainMap:
    rows = [line for line in text.splitlines() if line.strip()]
    if len(rows) != grid.ny:
        raise FormatError(f"{path}: dimension mismatch, file has {len(rows)} rows, grid ny={grid.ny}")
    gains = np.empty(grid.n_cells, dtype=np.float64)
    for j, line in enumerate(rows):
        cells = line.split(",")
        if len(cells) != grid.nx:
            raise FormatError(
                f"{path}: dimension mismatch, row {j} has {len(cells)} values, grid nx={grid.nx}"
            )
        for i, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise FormatError(f"{path}: non-numeric value '{cell.strip()}' at row {j}, col {i}")
            gains[j * grid.nx + i] = v if math.isfinite(v) else NO_PATH_DB
    return PathGainMap(site_id=site_id, grid=grid, gains_db=gains, provenance="imported")


def import_path_gain_map(path: str | Path, grid: GridSpec, site_id: int) -> PathGainMap:
    """Read a PGG1 or CSV gain grid; non-finite entries become NO_PATH_DB.

    The format is sniffed from the file contents: a PGG1 magic selects the
    binary layout, anything else parses as a CSV raster (ny rows of nx
    comma-separated values, row j on line j).
    """
    data = Path(path).read_bytes()
    if data[:4] == _PGG1_MAGIC:
        return _import_pgg1(data, grid, site_id, path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: neither PGG1 nor readable CSV") from exc
    return _import_csv(text, grid, site_id, path)
