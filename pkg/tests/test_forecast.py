import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harvestcast.data import fit_normalizer, generate_synthetic, normalize_arrays
from harvestcast.errors import ContractError, MissingDataError
from harvestcast.forecast import NODATA, BBoxRequest, predict_bbox
from harvestcast.model import build
from harvestcast.raster import (SOIL_VARIABLES, Grid, InMemorySourceClient, assemble_features, grid_bytes,
                                load_sources_config, month_periods)
from harvestcast.world import write_world

SEASON = "2016-09"


@pytest.fixture(scope="module")
def net():
    from harvestcast.model import YieldNetConfig
    n = build(YieldNetConfig(lstm_units=6, lstm_layers=2, dense_units=5, post_concat_layers=2), seed=4)
    n.norm = fit_normalizer(generate_synthetic(80, seed=1))
    return n


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    cfg = write_world(d, (-20.5, -19.5, -50.5, -49.5), seed=2, years=(2016,), n_regions=3)
    return cfg


def _constant_client(value_of=lambda k: 10.0 + k, nodata_soil=None):
    grids = {}
    for k, var in enumerate(SOIL_VARIABLES):
        vals = np.full((20, 20), value_of(k), dtype=np.float32)
        if nodata_soil is not None and var == nodata_soil[0]:
            vals[nodata_soil[1]] = -9999.0
        grids[var] = Grid(var, 0.95, -0.95, -0.1, 0.1, -9999.0, vals)  # covers [-1, 1] both ways
    for t, period in enumerate(month_periods(SEASON)):
        for j, var in enumerate(("tmin", "tmax", "precip")):
            grids[(var, period)] = Grid(var, 0.75, -0.75, -0.5, 0.5, -9999.0, np.full((4, 4), 15.0 + t + 5 * j))
    return InMemorySourceClient(grids, cache_dir="")


def test_request_validation():
    with pytest.raises(ContractError):
        BBoxRequest(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ContractError):
        BBoxRequest(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ContractError):
        BBoxRequest(0.0, 1.0, 0.0, 1.0, resolution_deg=0.0)
    with pytest.raises(ContractError):
        BBoxRequest.parse("1,2,3")
    r = BBoxRequest.parse("-20.1,-50.2,-19.9,-49.9")
    assert r.as_tuple() == (-20.1, -19.9, -50.2, -49.9)
    assert r.resolution_deg == 0.0025


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 2.0), st.floats(0.001, 2.0), st.sampled_from([0.0025, 0.01, 0.05, 0.1, 0.3]))
def test_output_dimensions(h, w, res):
    r = BBoxRequest(-10.0, -10.0 + h, 20.0, 20.0 + w, res)
    rows, cols = r.shape
    assert rows == int(np.ceil(round(h / res, 9)))
    assert cols == int(np.ceil(round(w / res, 9)))
    assert rows >= 1 and cols >= 1


def test_exact_multiple_has_no_extra_cell():
    assert BBoxRequest(0.0, 0.01, 0.0, 0.02, 0.0025).shape == (4, 8)


def test_single_cell_equals_predict(net):
    client = _constant_client(lambda k: 5.0 + 0.3 * k)
    req = BBoxRequest(0.1, 0.2, 0.3, 0.4, resolution_deg=0.1, season=SEASON)
    grid = predict_bbox(req, client, net)
    assert (grid.rows, grid.cols) == (1, 1)
    static, dynamic = assemble_features(client, 0.15, 0.35, SEASON)
    s, d = normalize_arrays(static, dynamic, net.norm)
    assert grid.values[0, 0] == np.float32(max(0.0, net.predict(d, s)))
    assert grid.lat0 == pytest.approx(0.15) and grid.lon0 == pytest.approx(0.35) and grid.dlat == -0.1


def test_constant_sources_constant_output(net):
    frozen = build(net.config, seed=4)
    frozen.norm = fit_normalizer(generate_synthetic(80, seed=1))
    frozen.norm.static_dropped[-2:] = True  # lat and lon normalize to 0
    req = BBoxRequest(-0.4, 0.4, -0.4, 0.4, resolution_deg=0.1, season=SEASON)
    grid = predict_bbox(req, _constant_client(), frozen)
    assert np.unique(grid.values).size == 1


def test_nodata_cells(net):
    client = _constant_client(nodata_soil=("cec_d30", (slice(0, 10), slice(None))))  # lat > 0
    req = BBoxRequest(-0.4, 0.4, -0.4, 0.4, resolution_deg=0.1, season=SEASON)
    grid = predict_bbox(req, client, net)
    assert grid.nodata == NODATA
    missing = grid.missing_mask()
    assert missing[:4].all() and not missing[4:].any()
    assert (grid.values[~missing] >= 0).all()


def test_empty_coverage_names_variables(net):
    req = BBoxRequest(-0.4, 0.4, -0.4, 0.4, resolution_deg=0.1, season=SEASON)
    client = _constant_client(nodata_soil=("soc_d5", (slice(None), slice(None))))
    with pytest.raises(MissingDataError, match="soc_d5"):
        predict_bbox(req, client, net)
    far = BBoxRequest(30.0, 30.5, 30.0, 30.5, resolution_deg=0.1, season=SEASON)
    with pytest.raises(MissingDataError, match="clay_d0"):
        predict_bbox(far, _constant_client(), net)


def test_requires_norm(net):
    bare = build(net.config, seed=0)
    with pytest.raises(ContractError):
        predict_bbox(BBoxRequest(0.0, 0.1, 0.0, 0.1, 0.1, SEASON), _constant_client(), bare)


def test_workers_do_not_change_output(net, world):
    req = BBoxRequest(-20.2, -19.8, -50.2, -49.8, resolution_deg=0.01, season=SEASON)
    serial = predict_bbox(req, load_sources_config(world, cache_dir=""), net, workers=1, chunk_size=64)
    parallel = predict_bbox(req, load_sources_config(world, cache_dir=""), net, workers=8, chunk_size=64)
    assert grid_bytes(serial) == grid_bytes(parallel)
    assert (serial.rows, serial.cols) == (40, 40)
    assert np.unique(serial.values).size > 100


def test_world_yields_follow_ground_truth(world):
    import csv

    from harvestcast.data import synthetic_ground_truth
    with open(world.parent / "yields.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    client = load_sources_config(world, cache_dir="")
    for row in rows:
        s, d = assemble_features(client, float(row["lat"]), float(row["lon"]), f"{row['year']}-09")
        g = synthetic_ground_truth(s[None], d[None])[0]
        assert abs(float(row["yield_kg_ha"]) - g) < 5 * 0.05 * 3080.0
