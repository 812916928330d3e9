"""A small synthetic world on disk: soil and monthly weather grids, a
sources config and a yield table, for exercising the CLI end to end.

Fields are smooth sinusoids with seeded phases, scaled to the same ranges
as :func:`harvestcast.data.generate_synthetic`; yields come from the same
ground-truth function applied to features sampled at each region point.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import DEPTHS_CM, SOIL_PROPERTIES, SYNTH_CONSTANTS, TIME_STEPS, synthetic_ground_truth, synthetic_mean_yield
from .raster import Grid, assemble_features, load_sources_config, month_periods, write_grid


def _field(rng, lats, lons):
    """Smooth field in [0, 1] over the lat/lon mesh."""
    a, b = rng.uniform(2.0, 6.0, 2)
    p, q = rng.uniform(0, 2 * np.pi, 2)
    return 0.5 + 0.5 * np.sin(a * lats[:, None] + p) * np.cos(b * lons[None, :] + q)


def write_world(directory, bbox, seed=0, years=(2015, 2016, 2017), season_start_month=9,
                n_regions=40, soil_res=0.01, weather_res=0.25, noise=0.05):
    """Write grids, ``sources.cfg`` and ``yields.csv`` under ``directory``.

    ``bbox`` is ``(lat_min, lat_max, lon_min, lon_max)``. Returns the path
    of the sources config.
    """
    c = SYNTH_CONSTANTS
    rng = np.random.default_rng(seed)
    out = Path(directory)
    (out / "soil").mkdir(parents=True, exist_ok=True)
    (out / "weather").mkdir(parents=True, exist_ok=True)
    lat_min, lat_max, lon_min, lon_max = bbox

    def mesh(res, pad):
        lats = np.arange(lat_max + pad - res / 2, lat_min - pad, -res)
        lons = np.arange(lon_min - pad + res / 2, lon_max + pad, res)
        return lats, lons

    s_lats, s_lons = mesh(soil_res, soil_res)
    depths = np.array(DEPTHS_CM, dtype=np.float64)
    trend = np.log1p(depths) / np.log1p(depths[-1])
    ranges = dict(c["soil"])
    ranges["soc"] = c["soc_top"] + [0.0, 0.0]
    tops = {p: _field(rng, s_lats, s_lons) for p in ranges}
    profiles = {}
    for prop, (lo, hi, delta, _) in ranges.items():
        top = lo + (hi - lo) * tops[prop]
        for k, d in enumerate(DEPTHS_CM):
            if prop == "soc":
                val = top * np.exp(-d / c["soc_decay_cm"]) + c["soc_floor"]
            else:
                val = top + delta * trend[k]
            profiles[(prop, d)] = val
    offset = c["ph_kcl_offset"][0] + (c["ph_kcl_offset"][1] - c["ph_kcl_offset"][0]) * _field(rng, s_lats, s_lons)
    for d in DEPTHS_CM:
        profiles[("sand", d)] = 100.0 - profiles[("clay", d)] - profiles[("silt", d)]
        profiles[("ph_kcl", d)] = profiles[("ph_h2o", d)] - offset
    for prop in SOIL_PROPERTIES:
        for d in DEPTHS_CM:
            g = Grid(f"{prop}_d{d}", float(s_lats[0]), float(s_lons[0]), -soil_res, soil_res, -9999.0,
                     profiles[(prop, d)])
            write_grid(g, out / "soil" / f"{prop}_d{d}.agrd")

    w_lats, w_lons = mesh(weather_res, weather_res)
    months = np.arange(TIME_STEPS)
    base = c["temp_base"] + c["temp_amplitude"] * np.sin(np.pi * (months + 0.5) / TIME_STEPS)
    clim = np.array(c["precip_climatology"])
    lo_s, hi_s = c["precip_scale"]
    lo_d, hi_d = c["diurnal_range"]
    a = c["temp_anomaly"]
    for year in years:
        anomaly = -a + 2 * a * _field(rng, w_lats, w_lons)
        scale = lo_s + (hi_s - lo_s) * _field(rng, w_lats, w_lons)
        diurnal = lo_d + (hi_d - lo_d) * _field(rng, w_lats, w_lons)
        for t, period in enumerate(month_periods(f"{year}-{season_start_month:02d}")):
            tmin = base[t] + anomaly
            fields = {"tmin": tmin, "tmax": tmin + diurnal, "precip": clim[t] * scale}
            for var, values in fields.items():
                g = Grid(var, float(w_lats[0]), float(w_lons[0]), -weather_res, weather_res, -9999.0, values)
                write_grid(g, out / "weather" / f"{var}_{period}.agrd")

    cfg = out / "sources.cfg"
    cfg.write_text("root = .\nsoil = soil/{variable}.agrd\nweather = weather/{variable}_{period}.agrd\n")

    client = load_sources_config(cfg, cache_dir="")
    r_lat = rng.uniform(lat_min, lat_max, n_regions)
    r_lon = rng.uniform(lon_min, lon_max, n_regions)
    sigma = noise * synthetic_mean_yield(c)
    with open(out / "yields.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "year", "lat", "lon", "yield_kg_ha"])
        for year in years:
            season = f"{year}-{season_start_month:02d}"
            for k in range(n_regions):
                static, dynamic = assemble_features(client, r_lat[k], r_lon[k], season)
                g = float(synthetic_ground_truth(static[None], dynamic[None], c)[0])
                y = max(0.0, g + float(rng.standard_normal()) * sigma)
                w.writerow([f"R{k:04d}", year, repr(float(r_lat[k])), repr(float(r_lon[k])), repr(y)])
    return cfg
