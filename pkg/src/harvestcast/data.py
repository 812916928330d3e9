"""Sample schema, sample-table I/O, splitting, normalization and the
synthetic world used for desk-scale training runs.

Static vector (65): nine soil properties, each at seven depths
(property-major), then latitude and longitude. Dynamic matrix (8 x 3):
one row per crop-cycle month, columns (t_min degC, t_max degC, precip mm).
Yield labels stay in kg/ha; only features are standardized.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SampleTableError

logger = logging.getLogger(__name__)

SOIL_PROPERTIES = (
    "clay", "silt", "sand", "bulk_density", "coarse_fragments",
    "cec", "soc", "ph_h2o", "ph_kcl",
)
DEPTHS_CM = (0, 5, 15, 30, 60, 100, 200)
WEATHER_VARIABLES = ("tmin", "tmax", "precip")
TIME_STEPS = 8

SOIL_COLUMNS = tuple(f"{p}_d{d}" for p in SOIL_PROPERTIES for d in DEPTHS_CM)
STATIC_NAMES = SOIL_COLUMNS + ("lat", "lon")
DYNAMIC_COLUMNS = tuple(f"m{m}_{v}" for m in range(1, TIME_STEPS + 1) for v in WEATHER_VARIABLES)
TABLE_COLUMNS = ("region_id", "year", "lat", "lon") + SOIL_COLUMNS + DYNAMIC_COLUMNS + ("yield_kg_ha",)

N_STATIC = len(STATIC_NAMES)
N_SOIL = len(SOIL_COLUMNS)
SPLITS = ("train", "validation", "test")


@dataclass
class Sample:
    region_id: str
    year: int
    lat: float
    lon: float
    static: np.ndarray
    dynamic: np.ndarray
    yield_kg_ha: float


class Dataset:
    """Column-oriented sample collection.

    ``split`` is ``None`` until :func:`split_dataset` assigns each sample to
    ``"train"``, ``"validation"`` or ``"test"``.
    """

    def __init__(self, region_ids, years, static, dynamic, yields,
                 provenance="real", split=None, metadata=None):
        self.region_ids = list(region_ids)
        self.years = np.asarray(years, dtype=np.int64)
        self.static = np.asarray(static, dtype=np.float64).reshape(-1, N_STATIC)
        self.dynamic = np.asarray(dynamic, dtype=np.float64).reshape(-1, TIME_STEPS, len(WEATHER_VARIABLES))
        self.yields = np.asarray(yields, dtype=np.float64).reshape(-1)
        self.provenance = provenance
        self.split = None if split is None else np.asarray(split, dtype=object)
        self.metadata = dict(metadata or {})
        n = len(self.region_ids)
        if not (len(self.years) == len(self.static) == len(self.dynamic) == len(self.yields) == n):
            raise ContractError("dataset columns have different lengths")
        if self.split is not None and len(self.split) != n:
            raise ContractError("split assignment length does not match dataset")

    @classmethod
    def from_samples(cls, samples, provenance="real", metadata=None):
        samples = list(samples)
        return cls(
            [s.region_id for s in samples],
            [s.year for s in samples],
            np.array([s.static for s in samples]).reshape(len(samples), N_STATIC),
            np.array([s.dynamic for s in samples]).reshape(len(samples), TIME_STEPS, 3),
            [s.yield_kg_ha for s in samples],
            provenance=provenance, metadata=metadata,
        )

    def __len__(self):
        return len(self.region_ids)

    def __getitem__(self, k):
        return Sample(self.region_ids[k], int(self.years[k]), float(self.static[k, -2]),
                      float(self.static[k, -1]), self.static[k].copy(), self.dynamic[k].copy(),
                      float(self.yields[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def lat(self):
        return self.static[:, -2]

    @property
    def lon(self):
        return self.static[:, -1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.region_ids == other.region_ids
                and self.provenance == other.provenance
                and np.array_equal(self.years, other.years)
                and np.array_equal(self.static, other.static)
                and np.array_equal(self.dynamic, other.dynamic)
                and np.array_equal(self.yields, other.yields))

    def indices(self, name):
        if self.split is None:
            raise ContractError("dataset has no split assignment")
        return np.flatnonzero(self.split == name)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset([self.region_ids[i] for i in idx], self.years[idx], self.static[idx],
                       self.dynamic[idx], self.yields[idx], self.provenance,
                       None if self.split is None else self.split[idx], self.metadata)

    def with_split(self, split):
        return Dataset(self.region_ids, self.years, self.static, self.dynamic, self.yields,
                       self.provenance, split, self.metadata)


def validate_sample(static, dynamic, y):
    """Return a list of invariant violations (empty when the sample is valid)."""
    problems = []
    if static.shape != (N_STATIC,):
        problems.append(f"static vector has {static.size} values, expected {N_STATIC}")
    if dynamic.shape != (TIME_STEPS, 3):
        problems.append(f"dynamic matrix has shape {dynamic.shape}, expected ({TIME_STEPS}, 3)")
    if not (np.isfinite(static).all() and np.isfinite(dynamic).all() and math.isfinite(y)):
        problems.append("non-finite value")
    if y < 0:
        problems.append(f"negative yield {y}")
    if static.shape == (N_STATIC,):
        fractions = static[:3 * len(DEPTHS_CM)]
        if ((fractions < 0) | (fractions > 100)).any():
            problems.append("clay/silt/sand fraction outside [0, 100]")
    return problems


# -- sample table --------------------------------------------------------------

def _meta_path(path):
    return f"{os.fspath(path)}.meta.json"


def write_samples(dataset, path):
    """Write the comma-separated sample table (plus a ``.meta.json`` sidecar
    holding provenance and metadata). Floats use ``repr`` so reads are exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for k in range(len(dataset)):
            s = dataset.static[k]
            row = [dataset.region_ids[k], int(dataset.years[k]), repr(float(s[-2])), repr(float(s[-1]))]
            row += [repr(float(v)) for v in s[:N_SOIL]]
            row += [repr(float(v)) for v in dataset.dynamic[k].reshape(-1)]
            row.append(repr(float(dataset.yields[k])))
            w.writerow(row)
    with open(_meta_path(path), "w") as fh:
        json.dump({"provenance": dataset.provenance, "metadata": dataset.metadata}, fh, indent=1)


def load_samples(path):
    """Parse a sample table; every bad row is reported with its line number."""
    errors = []
    ids, years, statics, dynamics, yields = [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SampleTableError([(1, "missing header row")])
        if tuple(h.strip() for h in header) != TABLE_COLUMNS:
            raise SampleTableError([(1, f"header does not match the {len(TABLE_COLUMNS)}-column schema")])
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(TABLE_COLUMNS):
                errors.append((line, f"row has {len(row)} columns, expected {len(TABLE_COLUMNS)}"))
                continue
            try:
                year = int(row[1])
                nums = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError as exc:
                errors.append((line, f"non-numeric field ({exc})"))
                continue
            lat, lon = nums[0], nums[1]
            static = np.concatenate([nums[2:2 + N_SOIL], [lat, lon]])
            dynamic = nums[2 + N_SOIL:2 + N_SOIL + TIME_STEPS * 3].reshape(TIME_STEPS, 3)
            y = nums[-1]
            problems = validate_sample(static, dynamic, y)
            if problems:
                errors.append((line, "; ".join(problems)))
                continue
            ids.append(row[0])
            years.append(year)
            statics.append(static)
            dynamics.append(dynamic)
            yields.append(y)
    if errors:
        raise SampleTableError(errors)
    provenance, metadata = "real", {}
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path)) as fh:
            side = json.load(fh)
        provenance = side.get("provenance", provenance)
        metadata = side.get("metadata", {})
    n = len(ids)
    return Dataset(ids, years, np.array(statics).reshape(n, N_STATIC),
                   np.array(dynamics).reshape(n, TIME_STEPS, 3), yields, provenance, metadata=metadata)


# -- splitting -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    validation_fraction: float = 0.3  # of the non-test remainder


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_sizes(n, spec=SplitSpec()):
    test = _round_half_up(spec.test_fraction * n)
    val = _round_half_up(spec.validation_fraction * (n - test))
    return n - test - val, val, test


def split_dataset(dataset, seed, spec=SplitSpec()):
    """Seeded shuffle, then test / validation / train buckets (``split_sizes``)."""
    n = len(dataset)
    if n < 10:
        raise ContractError(f"dataset too small to split ({n} < 10 samples)")
    n_train, n_val, n_test = split_sizes(n, spec)
    perm = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype=object)
    split[perm[:n_test]] = "test"
    split[perm[n_test:n_test + n_val]] = "validation"
    split[perm[n_test + n_val:]] = "train"
    return dataset.with_split(split)


# -- normalization -------------------------------------------------------------

@dataclass
class NormStats:
    """Per-feature mean and population std. Dropped (constant) features
    normalize to 0 so the network width never changes."""

    static_mean: np.ndarray
    static_std: np.ndarray
    dynamic_mean: np.ndarray
    dynamic_std: np.ndarray
    static_dropped: np.ndarray = field(default=None)
    dynamic_dropped: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.static_dropped is None:
            self.static_dropped = np.zeros(np.shape(self.static_mean), dtype=bool)
        if self.dynamic_dropped is None:
            self.dynamic_dropped = np.zeros(np.shape(self.dynamic_mean), dtype=bool)

    def dropped_features(self):
        names = [STATIC_NAMES[i] for i in np.flatnonzero(self.static_dropped)]
        names += [DYNAMIC_COLUMNS[i] for i in np.flatnonzero(self.dynamic_dropped.reshape(-1))]
        return names


def _column_stats(x):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    dropped = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return mean, np.where(dropped, 1.0, std), dropped


def fit_normalizer(dataset):
    """Fit on the train split (or on everything if the dataset is unsplit)."""
    if dataset.split is not None:
        idx = dataset.indices("train")
        if len(idx) == 0:
            raise ContractError("train split is empty")
        static, dynamic = dataset.static[idx], dataset.dynamic[idx]
    else:
        static, dynamic = dataset.static, dataset.dynamic
    if len(static) == 0:
        raise ContractError("cannot fit normalizer on an empty dataset")
    s_mean, s_std, s_drop = _column_stats(static)
    d_mean, d_std, d_drop = _column_stats(dynamic)
    stats = NormStats(s_mean, s_std, d_mean, d_std, s_drop, d_drop)
    dropped = stats.dropped_features()
    if dropped:
        warnings.warn(f"constant features dropped from normalization: {', '.join(dropped)}",
                      RuntimeWarning, stacklevel=2)
    return stats


def normalize_arrays(static, dynamic, stats):
    s = (np.asarray(static, dtype=np.float64) - stats.static_mean) / stats.static_std
    d = (np.asarray(dynamic, dtype=np.float64) - stats.dynamic_mean) / stats.dynamic_std
    s = np.where(stats.static_dropped, 0.0, s)
    d = np.where(stats.dynamic_dropped, 0.0, d)
    return s, d


def normalize(sample, stats):
    return normalize_arrays(sample.static, sample.dynamic, stats)


def denormalize_arrays(static, dynamic, stats):
    s = np.asarray(static) * stats.static_std + stats.static_mean
    d = np.asarray(dynamic) * stats.dynamic_std + stats.dynamic_mean
    return s, d


# -- synthetic world -----------------------------------------------------------
#
# Every driver is uniform, so the moments of the ground-truth terms are closed
# form. Soil profiles are topsoil value + depth trend * log1p(d)/log1p(200)
# + uniform jitter. Yield = max(0, g + N(0, sigma)), sigma = noise * E[g].

SYNTH_CONSTANTS = {
    "version": 1,
    "base_yield": 3500.0,
    "lat_range": [-30.0, -10.0],
    "lon_range": [-60.0, -45.0],
    # property: (topsoil low, topsoil high, trend to 200 cm, jitter half-width)
    "soil": {
        "clay": [15.0, 55.0, 10.0, 1.0],
        "silt": [10.0, 35.0, -3.0, 1.0],
        "bulk_density": [1100.0, 1600.0, 150.0, 10.0],
        "coarse_fragments": [1.0, 25.0, 5.0, 1.0],
        "cec": [8.0, 35.0, -5.0, 0.5],
        "ph_h2o": [45.0, 75.0, 3.0, 0.5],
    },
    "soc_top": [5.0, 35.0],
    "soc_decay_cm": 50.0,
    "soc_floor": 2.0,
    "soc_jitter": 0.3,
    "ph_kcl_offset": [5.0, 12.0],
    "temp_base": 16.0,
    "temp_amplitude": 4.0,
    "temp_anomaly": 2.0,
    "temp_jitter": 1.0,
    "diurnal_range": [9.0, 12.0],
    "precip_climatology": [60.0, 110.0, 170.0, 210.0, 220.0, 180.0, 120.0, 70.0],
    "precip_scale": [0.4, 1.6],
    "precip_jitter": 0.2,
    "critical_months": [2, 3, 4, 5],
    # coefficients of g / base_yield on standardized drivers
    "coef": {
        "water": 0.15, "water_sq": -0.05, "heat": -0.10, "heat_sq": -0.03,
        "clay": 0.08, "ph_sq": -0.04, "soc": 0.06, "water_x_soc": 0.04, "lat": 0.05,
    },
}


def _uvar(lo, hi):
    return (hi - lo) ** 2 / 12.0


def synthetic_driver_moments(c=SYNTH_CONSTANTS):
    """Analytic mean and std of each standardized driver of g."""
    soil = c["soil"]
    mid = c["critical_months"]
    clim = np.array(c["precip_climatology"])[mid]
    months = np.arange(TIME_STEPS)
    base = c["temp_base"] + c["temp_amplitude"] * np.sin(np.pi * (months + 0.5) / TIME_STEPS)
    k = len(mid)
    j_t = c["temp_jitter"]
    lo_s, hi_s = c["precip_scale"]
    j_p = c["precip_jitter"]
    lo_d, hi_d = c["diurnal_range"]
    a = c["temp_anomaly"]
    lat_lo, lat_hi = c["lat_range"]
    moments = {
        # mean of t_max over the critical months: base + anomaly + jitter + diurnal + jitter
        "heat": (base[mid].mean() + (lo_d + hi_d) / 2,
                 math.sqrt(_uvar(-a, a) + 2 * _uvar(-j_t, j_t) / k + _uvar(lo_d, hi_d))),
        # mean precip over the critical months: clim * (scale + jitter)
        "water": (clim.mean() * (lo_s + hi_s) / 2,
                  math.sqrt(clim.mean() ** 2 * _uvar(lo_s, hi_s)
                            + np.sum((clim / k) ** 2) * _uvar(-j_p, j_p))),
        "clay": ((soil["clay"][0] + soil["clay"][1]) / 2,
                 math.sqrt(_uvar(*soil["clay"][:2]) + _uvar(-soil["clay"][3], soil["clay"][3]))),
        "ph": ((soil["ph_h2o"][0] + soil["ph_h2o"][1]) / 2,
               math.sqrt(_uvar(*soil["ph_h2o"][:2]) + _uvar(-soil["ph_h2o"][3], soil["ph_h2o"][3]))),
        "soc": ((c["soc_top"][0] + c["soc_top"][1]) / 2 + c["soc_floor"],
                math.sqrt(_uvar(*c["soc_top"]) + _uvar(-c["soc_jitter"], c["soc_jitter"]))),
        "lat": ((lat_lo + lat_hi) / 2, math.sqrt(_uvar(lat_lo, lat_hi))),
    }
    return {k_: (float(m), float(s)) for k_, (m, s) in moments.items()}


def synthetic_ground_truth(static, dynamic, c=SYNTH_CONSTANTS):
    """Noise-free yield g for arrays of shape (N, 65) and (N, 8, 3)."""
    static = np.atleast_2d(static)
    dynamic = np.asarray(dynamic).reshape(-1, TIME_STEPS, 3)
    mom = synthetic_driver_moments(c)
    mid = c["critical_months"]
    nd = len(DEPTHS_CM)
    raw = {
        "water": dynamic[:, mid, 2].mean(axis=1),
        "heat": dynamic[:, mid, 1].mean(axis=1),
        "clay": static[:, SOIL_PROPERTIES.index("clay") * nd],
        "ph": static[:, SOIL_PROPERTIES.index("ph_h2o") * nd],
        "soc": static[:, SOIL_PROPERTIES.index("soc") * nd],
        "lat": static[:, -2],
    }
    u = {k: (v - mom[k][0]) / mom[k][1] for k, v in raw.items()}
    k = c["coef"]
    rel = (1.0 + k["water"] * u["water"] + k["water_sq"] * u["water"] ** 2
           + k["heat"] * u["heat"] + k["heat_sq"] * u["heat"] ** 2
           + k["clay"] * u["clay"] + k["ph_sq"] * u["ph"] ** 2 + k["soc"] * u["soc"]
           + k["water_x_soc"] * u["water"] * u["soc"] + k["lat"] * u["lat"])
    return c["base_yield"] * rel


def synthetic_mean_yield(c=SYNTH_CONSTANTS):
    """E[g]: standardized drivers have E[u] = 0, E[u^2] = 1 and are independent."""
    k = c["coef"]
    return c["base_yield"] * (1.0 + k["water_sq"] + k["heat_sq"] + k["ph_sq"])


def _synthetic_features(rng, n, c, lat=None, lon=None):
    lat = rng.uniform(*c["lat_range"], n) if lat is None else np.asarray(lat, dtype=np.float64)
    lon = rng.uniform(*c["lon_range"], n) if lon is None else np.asarray(lon, dtype=np.float64)
    depths = np.array(DEPTHS_CM, dtype=np.float64)
    trend = np.log1p(depths) / np.log1p(depths[-1])
    nd = len(depths)

    def profile(lo, hi, delta, jitter):
        top = rng.uniform(lo, hi, n)
        return top[:, None] + delta * trend[None, :] + rng.uniform(-jitter, jitter, (n, nd))

    soil = c["soil"]
    clay = profile(*soil["clay"])
    silt = profile(*soil["silt"])
    sand = 100.0 - clay - silt
    bd = profile(*soil["bulk_density"])
    cf = profile(*soil["coarse_fragments"])
    cec = profile(*soil["cec"])
    soc_top = rng.uniform(*c["soc_top"], n)
    soc = (soc_top[:, None] * np.exp(-depths / c["soc_decay_cm"])[None, :] + c["soc_floor"]
           + rng.uniform(-c["soc_jitter"], c["soc_jitter"], (n, nd)))
    ph = profile(*soil["ph_h2o"])
    phk = ph - rng.uniform(*c["ph_kcl_offset"], n)[:, None]
    static = np.concatenate([clay, silt, sand, bd, cf, cec, soc, ph, phk, lat[:, None], lon[:, None]], axis=1)

    months = np.arange(TIME_STEPS)
    base = c["temp_base"] + c["temp_amplitude"] * np.sin(np.pi * (months + 0.5) / TIME_STEPS)
    a, jt = c["temp_anomaly"], c["temp_jitter"]
    tmin = base[None, :] + rng.uniform(-a, a, n)[:, None] + rng.uniform(-jt, jt, (n, TIME_STEPS))
    tmax = tmin + rng.uniform(*c["diurnal_range"], n)[:, None] + rng.uniform(-jt, jt, (n, TIME_STEPS))
    clim = np.array(c["precip_climatology"])
    scale = rng.uniform(*c["precip_scale"], n)
    jp = c["precip_jitter"]
    precip = clim[None, :] * (scale[:, None] + rng.uniform(-jp, jp, (n, TIME_STEPS)))
    dynamic = np.stack([tmin, tmax, precip], axis=-1)
    return static, dynamic


def generate_synthetic(n, seed, noise=0.05, constants=None):
    """Draw ``n`` independent synthetic samples with known ground truth.

    ``metadata`` carries every constant, the analytic mean of g, the noise
    sigma and the per-sample g values so tests can use g as an oracle.
    """
    if n < 1:
        raise ContractError("synthetic dataset size must be >= 1")
    c = SYNTH_CONSTANTS if constants is None else constants
    rng = np.random.default_rng(seed)
    static, dynamic = _synthetic_features(rng, n, c)
    g = synthetic_ground_truth(static, dynamic, c)
    mean_g = synthetic_mean_yield(c)
    sigma = noise * mean_g
    eps = rng.standard_normal(n) * sigma if sigma > 0 else np.zeros(n)
    yields = np.maximum(g + eps, 0.0)
    metadata = {
        "generator": "harvestcast.data.synthetic_ground_truth",
        "constants": c,
        "seed": seed,
        "noise_fraction": noise,
        "noise_sigma": sigma,
        "analytic_mean_g": mean_g,
        "g": g.tolist(),
    }
    ids = [f"S{k:06d}" for k in range(n)]
    years = 2000 + np.arange(n) % 18
    return Dataset(ids, years, static, dynamic, yields, provenance="synthetic", metadata=metadata)
