import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harvestcast.data import (DYNAMIC_COLUMNS, N_STATIC, SOIL_COLUMNS, STATIC_NAMES, TABLE_COLUMNS, Dataset,
                              SplitSpec, denormalize_arrays, fit_normalizer, generate_synthetic, load_samples,
                              normalize_arrays, split_dataset, split_sizes, synthetic_driver_moments,
                              synthetic_ground_truth, synthetic_mean_yield, validate_sample, write_samples)
from harvestcast.errors import ContractError, SampleTableError


def test_schema_widths():
    assert len(SOIL_COLUMNS) == 63
    assert len(STATIC_NAMES) == N_STATIC == 65
    assert len(DYNAMIC_COLUMNS) == 24
    assert len(TABLE_COLUMNS) == 92
    assert SOIL_COLUMNS[0] == "clay_d0" and SOIL_COLUMNS[-1] == "ph_kcl_d200"
    assert DYNAMIC_COLUMNS[:3] == ("m1_tmin", "m1_tmax", "m1_precip")


def test_sample_table_round_trip(tmp_path):
    ds = generate_synthetic(3, seed=1)
    path = tmp_path / "s.csv"
    write_samples(ds, path)
    back = load_samples(path)
    assert len(back) == 3
    assert back == ds
    assert back.provenance == "synthetic"
    assert back.metadata["g"] == ds.metadata["g"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _rewrite(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def test_short_row_is_reported_with_line(tmp_path):
    path = tmp_path / "s.csv"
    write_samples(generate_synthetic(3, seed=1), path)
    rows = _rows(path)
    rows[2] = rows[2][:88]
    _rewrite(path, rows)
    with pytest.raises(SampleTableError) as err:
        load_samples(path)
    assert err.value.errors == [(3, "row has 88 columns, expected 92")]


def test_every_bad_row_is_reported(tmp_path):
    path = tmp_path / "s.csv"
    write_samples(generate_synthetic(4, seed=1), path)
    rows = _rows(path)
    rows[1][10] = "abc"
    rows[3][-1] = "-5.0"
    _rewrite(path, rows)
    with pytest.raises(SampleTableError) as err:
        load_samples(path)
    lines = [line for line, _ in err.value.errors]
    assert lines == [2, 4]
    assert "negative yield" in err.value.errors[1][1]


def test_header_only_is_empty(tmp_path):
    path = tmp_path / "s.csv"
    _rewrite(path, [list(TABLE_COLUMNS)])
    ds = load_samples(path)
    assert len(ds) == 0


def test_wrong_header(tmp_path):
    path = tmp_path / "s.csv"
    _rewrite(path, [["a", "b"]])
    with pytest.raises(SampleTableError):
        load_samples(path)


def test_validate_sample():
    ds = generate_synthetic(1, seed=0)
    assert validate_sample(ds.static[0], ds.dynamic[0], 10.0) == []
    bad = ds.static[0].copy()
    bad[0] = 120.0
    assert validate_sample(bad, ds.dynamic[0], 10.0) == ["clay/silt/sand fraction outside [0, 100]"]
    assert validate_sample(ds.static[0], ds.dynamic[0], -1.0) == ["negative yield -1.0"]


def test_split_sizes_small():
    assert split_sizes(10) == (6, 2, 2)


def test_split_too_small():
    with pytest.raises(ContractError):
        split_dataset(generate_synthetic(9, seed=0), 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(10, 100_000))
def test_split_sizes_partition(n):
    train, val, test = split_sizes(n)
    assert train + val + test == n
    assert abs(test - 0.2 * n) <= 0.5
    assert abs(val - 0.3 * (n - test)) <= 0.5


@settings(max_examples=20, deadline=None)
@given(st.integers(10, 300), st.integers(0, 2**31))
def test_split_is_disjoint_exhaustive_and_seeded(n, seed):
    base = Dataset([str(k) for k in range(n)], np.zeros(n), np.zeros((n, 65)), np.zeros((n, 8, 3)), np.ones(n))
    ds = split_dataset(base, seed)
    counts = tuple(len(ds.indices(name)) for name in ("train", "validation", "test"))
    assert counts == split_sizes(n)
    assert sorted(np.concatenate([ds.indices(s) for s in ("train", "validation", "test")])) == list(range(n))
    assert list(split_dataset(base, seed).split) == list(ds.split)


def test_split_custom_spec():
    assert split_sizes(100, SplitSpec(0.1, 0.5)) == (45, 45, 10)


def _tiny(static_col):
    n = len(static_col)
    static = np.zeros((n, 65))
    static[:, 0] = static_col
    return Dataset([str(k) for k in range(n)], np.zeros(n), static, np.zeros((n, 8, 3)), np.ones(n))


def test_normalizer_hand_example():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = fit_normalizer(_tiny([1.0, 2.0, 3.0]))
    assert stats.static_mean[0] == 2.0
    assert stats.static_std[0] == pytest.approx(np.sqrt(2 / 3))
    s, _ = normalize_arrays(np.array([[1.0] + [0] * 64, [2.0] + [0] * 64, [3.0] + [0] * 64]),
                            np.zeros((3, 8, 3)), stats)
    np.testing.assert_allclose(s[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_constant_feature_dropped_with_warning():
    with pytest.warns(RuntimeWarning, match="silt_d0"):
        stats = fit_normalizer(_tiny([1.0, 2.0, 3.0]))
    assert "silt_d0" in stats.dropped_features()
    assert "clay_d0" not in stats.dropped_features()
    s, d = normalize_arrays(np.full((1, 65), 7.0), np.full((1, 8, 3), 7.0), stats)
    assert s.shape == (1, 65) and (s[0, 1:] == 0.0).all() and (d == 0.0).all()


def test_normalizer_uses_train_split_only():
    ds = split_dataset(generate_synthetic(50, seed=4), 0)
    stats = fit_normalizer(ds)
    train = ds.indices("train")
    np.testing.assert_allclose(stats.static_mean, ds.static[train].mean(axis=0))
    np.testing.assert_allclose(stats.dynamic_std, ds.dynamic[train].std(axis=0))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_normalize_inverse(seed):
    ds = generate_synthetic(20, seed=seed % 1000)
    stats = fit_normalizer(ds)
    s, d = normalize_arrays(ds.static, ds.dynamic, stats)
    s2, d2 = denormalize_arrays(s, d, stats)
    np.testing.assert_allclose(s2, ds.static, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(d2, ds.dynamic, rtol=1e-12, atol=1e-12)


def test_synthetic_deterministic():
    assert generate_synthetic(30, 5) == generate_synthetic(30, 5)
    assert generate_synthetic(30, 5) != generate_synthetic(30, 6)


def test_synthetic_samples_valid():
    ds = generate_synthetic(500, 3)
    for k in range(len(ds)):
        assert validate_sample(ds.static[k], ds.dynamic[k], ds.yields[k]) == []


def test_synthetic_noiseless_equals_ground_truth():
    ds = generate_synthetic(200, 2, noise=0.0)
    np.testing.assert_array_equal(ds.yields, np.maximum(synthetic_ground_truth(ds.static, ds.dynamic), 0.0))
    np.testing.assert_array_equal(ds.yields, ds.metadata["g"])


def test_synthetic_analytic_mean_frozen():
    # 3500 * (1 + E[water_sq] + E[heat_sq] + E[ph_sq]) with unit-variance drivers
    assert synthetic_mean_yield() == pytest.approx(3080.0, abs=1e-9)


def test_synthetic_driver_moments_monte_carlo():
    ds = generate_synthetic(200_000, 11, noise=0.0)
    mom = synthetic_driver_moments()
    emp = {
        "water": ds.dynamic[:, [2, 3, 4, 5], 2].mean(axis=1),
        "heat": ds.dynamic[:, [2, 3, 4, 5], 1].mean(axis=1),
        "clay": ds.static[:, 0],
        "lat": ds.static[:, -2],
    }
    for name, values in emp.items():
        mean, std = mom[name]
        assert values.mean() == pytest.approx(mean, abs=4 * std / np.sqrt(len(values)))
        assert values.std() == pytest.approx(std, rel=0.01)


def test_synthetic_mean_within_three_sigma():
    n = 20_000
    ds = generate_synthetic(n, 7)
    sigma = ds.yields.std()
    assert abs(ds.yields.mean() - synthetic_mean_yield()) < 3 * sigma / np.sqrt(n)
    assert ds.metadata["noise_sigma"] == pytest.approx(0.05 * 3080.0)
