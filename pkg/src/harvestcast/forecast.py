"""Gridded yield forecasts over a bounding box."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import normalize_arrays
from .errors import ContractError, MissingDataError
from .model import serve_yield
from .raster import Grid, assemble_features_batch

NODATA = -9999.0
DEFAULT_RESOLUTION_DEG = 0.0025  # ~250 m, the soil grid resolution


@dataclass(frozen=True)
class BBoxRequest:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    resolution_deg: float = DEFAULT_RESOLUTION_DEG
    season: str = ""
    checkpoint: str | None = None

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ContractError(
                f"degenerate bbox: lat [{self.lat_min}, {self.lat_max}], lon [{self.lon_min}, {self.lon_max}]")
        if not self.resolution_deg > 0:
            raise ContractError("resolution_deg must be positive")

    @classmethod
    def parse(cls, bbox, resolution_deg=DEFAULT_RESOLUTION_DEG, season="", checkpoint=None):
        """From ``"lat_min,lon_min,lat_max,lon_max"``."""
        try:
            lat_min, lon_min, lat_max, lon_max = (float(v) for v in bbox.split(","))
        except ValueError:
            raise ContractError(f"--bbox needs lat_min,lon_min,lat_max,lon_max, got {bbox!r}") from None
        return cls(lat_min, lat_max, lon_min, lon_max, resolution_deg, season, checkpoint)

    @property
    def shape(self):
        # rounding guards against 0.01 / 0.0025 = 4.000000000000001
        rows = math.ceil(round((self.lat_max - self.lat_min) / self.resolution_deg, 9))
        cols = math.ceil(round((self.lon_max - self.lon_min) / self.resolution_deg, 9))
        return rows, cols

    def cell_centers(self):
        """Row-major (north to south, west to east) center coordinates."""
        rows, cols = self.shape
        res = self.resolution_deg
        lats = self.lat_max - (np.arange(rows) + 0.5) * res
        lons = self.lon_min + (np.arange(cols) + 0.5) * res
        return lats, lons

    def as_tuple(self):
        return (self.lat_min, self.lat_max, self.lon_min, self.lon_max)


def predict_bbox(req, client, net, workers=1, chunk_size=256):
    """Forecast every output cell of ``req`` and return a yield Grid (kg/ha).

    Cells lacking source data are nodata. Prediction is split into fixed
    chunks of ``chunk_size`` cells whatever ``workers`` is, so the output
    does not depend on the thread count.
    """
    if net.norm is None:
        raise ContractError("model has no normalization statistics; cannot serve forecasts")
    rows, cols = req.shape
    lats, lons = req.cell_centers()
    lat_grid, lon_grid = np.meshgrid(lats, lons, indexing="ij")
    uncovered = []
    static, dynamic, valid = assemble_features_batch(
        client, lat_grid.ravel(), lon_grid.ravel(), req.season, bbox=req.as_tuple(), uncovered=uncovered)
    if not valid.any():
        detail = ", ".join(uncovered) if uncovered else "no single variable is empty; their valid cells never overlap"
        raise MissingDataError(f"no output cell has complete source coverage; uncovered: {detail}")
    idx = np.flatnonzero(valid)
    s_norm, d_norm = normalize_arrays(static[idx], dynamic[idx], net.norm)
    chunks = [slice(k, k + chunk_size) for k in range(0, len(idx), chunk_size)]

    def run(sl):
        return net.predict_batch(d_norm[sl], s_norm[sl])

    if workers <= 1:
        parts = [run(sl) for sl in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    raw = np.concatenate(parts)
    out = np.full(rows * cols, NODATA, dtype=np.float32)
    out[idx] = serve_yield(raw).astype(np.float32)
    res = req.resolution_deg
    return Grid("yield_kg_ha", float(lats[0]), float(lons[0]), -res, res, NODATA, out.reshape(rows, cols))
