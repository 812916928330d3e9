"""Georeferenced grids, the AGRD file format, point sampling and the
fusion of soil and weather grids into model features.

AGRD layout (little-endian)::

    b"AGRD" u16 version, u32 rows, u32 cols,
    f64 lat0, f64 lon0, f64 dlat, f64 dlon, f32 nodata,
    rows * cols f32 values, row-major

``lat0``/``lon0`` locate the center of cell (0, 0); ``dlat`` is negative
for north-up storage.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .data import DEPTHS_CM, N_STATIC, SOIL_PROPERTIES, TIME_STEPS, WEATHER_VARIABLES
from .errors import AssemblyError, FormatError, IntegrityError, MissingDataError, OutOfBoundsError

MAGIC = b"AGRD"
VERSION = 1
_HEADER = struct.Struct("<4sHII4df")
METHODS = {"nearest": 0, "bilinear": 1}

SOIL_VARIABLES = tuple(f"{p}_d{d}" for p in SOIL_PROPERTIES for d in DEPTHS_CM)


@dataclass
class Grid:
    variable: str
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.size == 0:
            raise FormatError(f"grid {self.variable!r}: values must be a non-empty 2-D array")
        if not self.dlon > 0 or not abs(self.dlat) > 0:
            raise FormatError(f"grid {self.variable!r}: need dlon > 0 and |dlat| > 0")
        nd = np.float32(self.nodata)
        mask = np.isnan(self.values) if np.isnan(nd) else self.values == nd
        if not np.isfinite(self.values[~mask]).all():
            raise FormatError(f"grid {self.variable!r}: non-finite data value")
        self.nodata = float(nd)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    def missing_mask(self):
        if math.isnan(self.nodata):
            return np.isnan(self.values)
        return self.values == np.float32(self.nodata)

    def extent(self):
        """(lat_min, lat_max, lon_min, lon_max) of the cell edges."""
        lats = (self.lat0 - 0.5 * self.dlat, self.lat0 + (self.rows - 0.5) * self.dlat)
        lons = (self.lon0 - 0.5 * self.dlon, self.lon0 + (self.cols - 0.5) * self.dlon)
        return min(lats), max(lats), min(lons), max(lons)

    def fractional_index(self, lat, lon):
        return (np.asarray(lat, dtype=np.float64) - self.lat0) / self.dlat, \
               (np.asarray(lon, dtype=np.float64) - self.lon0) / self.dlon

    def cell_centers(self):
        lats = self.lat0 + np.arange(self.rows) * self.dlat
        lons = self.lon0 + np.arange(self.cols) * self.dlon
        return lats, lons

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        head = (self.lat0, self.lon0, self.dlat, self.dlon)
        return (head == (other.lat0, other.lon0, other.dlat, other.dlon)
                and np.float32(self.nodata).tobytes() == np.float32(other.nodata).tobytes()
                and self.values.shape == other.values.shape
                and self.values.tobytes() == other.values.tobytes())


def grid_bytes(grid):
    header = _HEADER.pack(MAGIC, VERSION, grid.rows, grid.cols, grid.lat0, grid.lon0,
                          grid.dlat, grid.dlon, grid.nodata)
    return header + grid.values.astype("<f4").tobytes()


def write_grid(grid, path):
    with open(path, "wb") as fh:
        fh.write(grid_bytes(grid))


def grid_from_bytes(buf, variable="grid"):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("not an AGRD grid (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported AGRD version {version}")
    if len(buf) < _HEADER.size:
        raise IntegrityError("AGRD header truncated")
    _, _, rows, cols, lat0, lon0, dlat, dlon, nodata = _HEADER.unpack_from(buf, 0)
    expected = _HEADER.size + 4 * rows * cols
    if len(buf) != expected:
        raise IntegrityError(f"AGRD payload is {len(buf) - _HEADER.size} bytes, expected {4 * rows * cols}")
    if rows == 0 or cols == 0:
        raise FormatError("AGRD grid has zero rows or columns")
    values = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return Grid(variable, lat0, lon0, dlat, dlon, nodata, values.astype(np.float32))


def read_grid(path, variable=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    return grid_from_bytes(buf, variable or Path(path).stem)


def read_esri_ascii(path, variable=None):
    """Read an ESRI ASCII grid (``.asc``), the interchange format ``ingest`` accepts."""
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts or not parts[0][0].isalpha():
            break
        header[parts[0].lower()] = float(parts[1])
        pos += 1
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell = header["cellsize"]
    except KeyError as exc:
        raise FormatError(f"ESRI ASCII header missing {exc}") from exc
    if "xllcenter" in header:
        x0 = header["xllcenter"]
        y0 = header["yllcenter"]
    elif "xllcorner" in header:
        x0 = header["xllcorner"] + 0.5 * cell
        y0 = header["yllcorner"] + 0.5 * cell
    else:
        raise FormatError("ESRI ASCII header needs xllcorner/yllcorner or xllcenter/yllcenter")
    nodata = header.get("nodata_value", -9999.0)
    try:
        values = np.array(" ".join(lines[pos:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"non-numeric ESRI ASCII payload: {exc}") from exc
    if values.size != nrows * ncols:
        raise IntegrityError(f"ESRI ASCII payload has {values.size} values, expected {nrows * ncols}")
    # first data row is the northernmost
    lat0 = y0 + (nrows - 1) * cell
    return Grid(variable or Path(path).stem, lat0, x0, -cell, cell, nodata, values.reshape(nrows, ncols))


def _check_inside(grid, r, c):
    tol = 1e-9
    bad = (r < -0.5 - tol) | (r > grid.rows - 0.5 + tol) | (c < -0.5 - tol) | (c > grid.cols - 0.5 + tol)
    return bad


def sample_points(grid, lats, lons, method="bilinear", strict=True):
    """Vectorized sampling. Returns ``(values, valid)``.

    Out-of-extent points raise when ``strict`` else come back invalid.
    """
    r, c = grid.fractional_index(lats, lons)
    r = np.atleast_1d(r).astype(np.float64)
    c = np.atleast_1d(c).astype(np.float64)
    outside = _check_inside(grid, r, c)
    if strict and outside.any():
        k = int(np.flatnonzero(outside)[0])
        lat_min, lat_max, lon_min, lon_max = grid.extent()
        raise OutOfBoundsError(
            f"point ({np.atleast_1d(lats)[k]}, {np.atleast_1d(lons)[k]}) outside grid {grid.variable!r} "
            f"extent lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]")
    try:
        code = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown sampling method {method!r}") from None
    values, valid = kernels.sample_points(grid.values, np.ascontiguousarray(r), np.ascontiguousarray(c),
                                          code, np.float32(grid.nodata))
    valid = valid & ~outside
    return np.where(valid, values, np.nan), valid


def sample_grid(grid, lat, lon, method="bilinear"):
    """Value at one point, or ``None`` when the data there is nodata.

    Nearest takes the closest cell center. Bilinear blends the four
    surrounding centers; if any of them is nodata it falls back to the
    nearest valid one. Points within half a cell of the outer centers are
    accepted and clamped to the edge.
    """
    values, valid = sample_points(grid, [lat], [lon], method)
    return float(values[0]) if valid[0] else None


# -- sources -------------------------------------------------------------------

def month_periods(start, months=TIME_STEPS):
    """``["YYYY-MM", ...]`` for ``months`` consecutive months from ``start``."""
    try:
        year, month = (int(p) for p in str(start).split("-"))
    except ValueError:
        raise ValueError(f"season start must look like YYYY-MM, got {start!r}") from None
    if not 1 <= month <= 12:
        raise ValueError(f"bad month in {start!r}")
    out = []
    for k in range(months):
        m = month - 1 + k
        out.append(f"{year + m // 12:04d}-{m % 12 + 1:02d}")
    return out


class SourceClient:
    """Fetch interface: ``(variable, period, bbox) -> Grid`` with a request cache.

    Subclasses implement :meth:`_load`. Concurrent identical misses are
    collapsed into a single underlying load. When ``cache_dir`` is set
    (default: ``$HARVESTCAST_CACHE_DIR``), fetched grids are also kept on
    disk as AGRD files.
    """

    def __init__(self, cache_dir=None):
        if cache_dir is None:
            cache_dir = os.environ.get("HARVESTCAST_CACHE_DIR") or None
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.loads = 0
        self._cache = {}
        self._inflight = {}
        self._lock = threading.Lock()

    def _load(self, variable, period, bbox):
        raise NotImplementedError

    def _disk_path(self, key):
        digest = hashlib.sha256(repr(key).encode()).hexdigest()[:32]
        return self.cache_dir / f"{digest}.agrd"

    def fetch(self, variable, period=None, bbox=None):
        key = (variable, period, None if bbox is None else tuple(float(v) for v in bbox))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            event = self._inflight.get(key)
            leader = event is None
            if leader:
                event = self._inflight[key] = threading.Event()
        if not leader:
            event.wait()
            with self._lock:
                if key in self._cache:
                    return self._cache[key]
            return self.fetch(variable, period, bbox)
        try:
            grid = self._fetch_uncached(key)
            with self._lock:
                self._cache[key] = grid
            return grid
        finally:
            with self._lock:
                del self._inflight[key]
            event.set()

    def _fetch_uncached(self, key):
        variable, period, bbox = key
        if self.cache_dir is not None:
            path = self._disk_path(key)
            if path.exists():
                return read_grid(path, variable)
        with self._lock:
            self.loads += 1
        grid = self._load(variable, period, bbox)
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
            write_grid(grid, tmp)
            os.replace(tmp, path)
        return grid


class InMemorySourceClient(SourceClient):
    """Serves grids from a dict keyed by ``variable`` or ``(variable, period)``."""

    def __init__(self, grids, cache_dir=None):
        super().__init__(cache_dir=cache_dir)
        self.grids = dict(grids)

    def _load(self, variable, period, bbox):
        grid = self.grids.get((variable, period), self.grids.get(variable))
        if grid is None:
            raise MissingDataError(f"{variable}@{period}" if period else variable)
        return grid


class FileSourceClient(SourceClient):
    """Reads AGRD files named by a key-value sources config.

    Recognized keys::

        root    = directory that relative paths resolve against
        soil    = pattern with {variable}, e.g. soil/{variable}.agrd
        weather = pattern with {variable} and {period}, e.g. weather/{variable}_{period}.agrd
        <variable> = path                (explicit static file)
        <variable>@<YYYY-MM> = path      (explicit monthly file)
    """

    def __init__(self, entries, base_dir=".", cache_dir=None):
        super().__init__(cache_dir=cache_dir)
        self.entries = dict(entries)
        root = Path(self.entries.get("root", "."))
        self.root = root if root.is_absolute() else Path(base_dir) / root

    def path_for(self, variable, period=None):
        key = f"{variable}@{period}" if period else variable
        if key in self.entries:
            rel = self.entries[key]
        elif period is None and "soil" in self.entries:
            rel = self.entries["soil"].format(variable=variable)
        elif period is not None and "weather" in self.entries:
            rel = self.entries["weather"].format(variable=variable, period=period)
        else:
            raise MissingDataError(key)
        path = Path(rel)
        return path if path.is_absolute() else self.root / path

    def _load(self, variable, period, bbox):
        path = self.path_for(variable, period)
        if not path.exists():
            raise MissingDataError(f"{variable}@{period}" if period else variable)
        return read_grid(path, variable)


def read_kv_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key] = value
    return entries


def load_sources_config(path, cache_dir=None):
    return FileSourceClient(read_kv_file(path), base_dir=Path(path).parent, cache_dir=cache_dir)


# -- feature assembly ----------------------------------------------------------

def _fetch_all(client, periods, bbox, gaps):
    grids = {}
    for var in SOIL_VARIABLES:
        try:
            grids[var] = client.fetch(var, None, bbox)
        except MissingDataError:
            gaps.append(var)
    for period in periods:
        for var in WEATHER_VARIABLES:
            try:
                grids[(var, period)] = client.fetch(var, period, bbox)
            except MissingDataError:
                gaps.append(f"{var}@{period}")
    return grids


def assemble_features_batch(client, lats, lons, season, bbox=None, uncovered=None):
    """Features for many points: static (N, 65), dynamic (N, 8, 3) and a
    validity mask. Soil is sampled nearest, weather bilinear. A variable that
    cannot be fetched at all raises :class:`AssemblyError`; points that fall
    on nodata or outside a grid are flagged invalid instead. If ``uncovered``
    is a list, labels of variables valid at none of the points are appended.
    """
    lats = np.atleast_1d(np.asarray(lats, dtype=np.float64))
    lons = np.atleast_1d(np.asarray(lons, dtype=np.float64))
    periods = month_periods(season) if isinstance(season, str) else list(season)
    if len(periods) != TIME_STEPS:
        raise ValueError(f"season window must have {TIME_STEPS} months, got {len(periods)}")
    gaps = []
    grids = _fetch_all(client, periods, bbox, gaps)
    if gaps:
        raise AssemblyError(gaps)
    n = len(lats)
    static = np.empty((n, N_STATIC))
    dynamic = np.empty((n, TIME_STEPS, len(WEATHER_VARIABLES)))
    valid = np.ones(n, dtype=bool)
    for j, var in enumerate(SOIL_VARIABLES):
        vals, ok = sample_points(grids[var], lats, lons, "nearest", strict=False)
        static[:, j] = vals
        valid &= ok
        if uncovered is not None and not ok.any():
            uncovered.append(var)
    static[:, -2] = lats
    static[:, -1] = lons
    for t, period in enumerate(periods):
        for j, var in enumerate(WEATHER_VARIABLES):
            vals, ok = sample_points(grids[(var, period)], lats, lons, "bilinear", strict=False)
            dynamic[:, t, j] = vals
            valid &= ok
            if uncovered is not None and not ok.any():
                uncovered.append(f"{var}@{period}")
    return static, dynamic, valid


def assemble_features(client, lat, lon, season, bbox=None):
    """(static 65-vector, dynamic 8x3) for one point; any gap raises
    :class:`AssemblyError` naming every missing variable/month."""
    periods = month_periods(season) if isinstance(season, str) else list(season)
    gaps = []
    grids = _fetch_all(client, periods, bbox, gaps)
    static = np.empty(N_STATIC)
    dynamic = np.empty((TIME_STEPS, len(WEATHER_VARIABLES)))
    for j, var in enumerate(SOIL_VARIABLES):
        if var in grids:
            v = _sample_or_gap(grids[var], lat, lon, "nearest", var, gaps)
            static[j] = v
    static[-2], static[-1] = lat, lon
    for t, period in enumerate(periods):
        for j, var in enumerate(WEATHER_VARIABLES):
            key = (var, period)
            if key in grids:
                dynamic[t, j] = _sample_or_gap(grids[key], lat, lon, "bilinear", f"{var}@{period}", gaps)
    if gaps:
        raise AssemblyError(gaps)
    return static, dynamic


def _sample_or_gap(grid, lat, lon, method, label, gaps):
    try:
        v = sample_grid(grid, lat, lon, method)
    except OutOfBoundsError:
        gaps.append(f"{label} (outside grid)")
        return np.nan
    if v is None:
        gaps.append(f"{label} (nodata)")
        return np.nan
    return v
