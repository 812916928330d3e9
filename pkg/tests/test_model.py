import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harvestcast import tensor as T
from harvestcast.data import NormStats
from harvestcast.errors import DimensionError, FormatError, IntegrityError, NumericError
from harvestcast.model import (YieldNetConfig, build, checkpoint_bytes, checkpoint_from_bytes, expected_param_count,
                               load_checkpoint, param_count, save_checkpoint, serve_yield)
from harvestcast.optim import mae_loss
from harvestcast.tensor import Tensor, grad_check


@pytest.fixture(scope="module")
def default_net():
    return build(seed=0)


def test_default_layer_counts(default_net):
    assert len(default_net.lstm) == 3
    assert len(default_net.static) == 2
    assert len(default_net.trunk) == 5
    assert len(default_net.layers) == 11


def test_default_param_counts(default_net):
    assert default_net.layer_param_counts() == [318_080, 628_320, 628_320, 6_600, 10_100,
                                               38_100, 10_100, 10_100, 10_100, 10_100, 101]
    assert param_count(default_net) == 1_670_021
    assert expected_param_count(YieldNetConfig()) == 1_670_021


def test_lstm_count_closed_form():
    assert 4 * 283 * 280 + 4 * 280 == 318_080
    assert 4 * 560 * 280 + 1_120 == 628_320


def test_trace_shapes(default_net):
    trace = []
    default_net.forward(T.zeros(2, 8, 3), T.zeros(2, 65), trace=trace)
    assert trace == [
        ("dynamic_input", (8, 3)), ("lstm1", (8, 280)), ("lstm2", (8, 280)), ("lstm3", (280,)),
        ("static_input", (65,)), ("static1", (100,)), ("static2", (100,)), ("concat", (380,)),
        ("trunk1", (100,)), ("trunk2", (100,)), ("trunk3", (100,)), ("trunk4", (100,)), ("trunk5", (100,)),
        ("output", (1,)),
    ]


def test_zero_input_gives_zero(default_net):
    assert default_net.predict(np.zeros((8, 3)), np.zeros(65)) == 0.0


def test_identical_inputs_identical_outputs(default_net, rng):
    d, s = rng.standard_normal((8, 3)), rng.standard_normal(65)
    assert default_net.predict(d, s) == default_net.predict(d.copy(), s.copy())


def test_batch_equals_singles(small_net, rng):
    d, s = rng.standard_normal((9, 8, 3)), rng.standard_normal((9, 65))
    batch = small_net.predict_batch(d, s)
    singles = [small_net.predict(d[k], s[k]) for k in range(9)]
    np.testing.assert_allclose(batch, singles, rtol=1e-12, atol=1e-12)


def test_width_one_builds_and_predicts(rng):
    net = build(YieldNetConfig(lstm_units=1), seed=0)
    assert np.isfinite(net.predict(rng.standard_normal((8, 3)), rng.standard_normal(65)))


def test_predict_input_errors(small_net):
    with pytest.raises(DimensionError):
        small_net.predict(np.zeros((7, 3)), np.zeros(65))
    with pytest.raises(DimensionError):
        small_net.predict(np.zeros((8, 3)), np.zeros(64))
    bad = np.zeros(65)
    bad[3] = np.nan
    with pytest.raises(NumericError):
        small_net.predict(np.zeros((8, 3)), bad)


def test_config_validation():
    with pytest.raises(ValueError):
        YieldNetConfig(lstm_units=0)
    with pytest.raises(ValueError):
        YieldNetConfig(learning_rate=-1.0)


def test_serve_yield_clamps():
    np.testing.assert_array_equal(serve_yield(np.array([-3.0, 0.0, 5.5])), [0.0, 0.0, 5.5])


def test_small_net_end_to_end_gradient(small_net, rng):
    d = Tensor(rng.standard_normal((3, 8, 3)))
    s = Tensor(rng.standard_normal((3, 65)))
    y = Tensor(rng.standard_normal(3) * 5)
    loss = lambda p: mae_loss(small_net.forward(d, s), y)  # noqa: E731
    for p in small_net.parameters():
        coords = rng.choice(p.size, size=min(p.size, 5), replace=False)
        assert grad_check(loss, p, coords=coords) < 1e-4


def _with_norm(net, rng):
    net.norm = NormStats(rng.standard_normal(65), rng.random(65) + 0.5, rng.standard_normal((8, 3)),
                         rng.random((8, 3)) + 0.5, rng.random(65) < 0.1, np.zeros((8, 3), dtype=bool))
    return net


def test_checkpoint_round_trip(tmp_path, small_net, rng):
    net = _with_norm(small_net, rng)
    path = tmp_path / "m.ynet"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.config == net.config
    for a, b in zip(net.parameters(), back.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    for name in ("static_mean", "static_std", "dynamic_mean", "dynamic_std", "static_dropped", "dynamic_dropped"):
        np.testing.assert_array_equal(getattr(back.norm, name), getattr(net.norm, name))
    assert checkpoint_bytes(back) == path.read_bytes()
    d, s = rng.standard_normal((100, 8, 3)), rng.standard_normal((100, 65))
    assert net.predict_batch(d, s).tobytes() == back.predict_batch(d, s).tobytes()


def test_checkpoint_without_norm(small_net):
    back = checkpoint_from_bytes(checkpoint_bytes(small_net))
    assert back.norm is None


def test_checkpoint_bad_magic_and_version(small_net):
    buf = bytearray(checkpoint_bytes(small_net))
    bad = bytearray(buf)
    bad[0] ^= 0xFF
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bytes(bad))
    bad = bytearray(buf)
    bad[4] = 9
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bytes(bad))


def test_checkpoint_truncated(small_net):
    buf = checkpoint_bytes(small_net)
    with pytest.raises(IntegrityError):
        checkpoint_from_bytes(buf[:-1])
    with pytest.raises(IntegrityError):
        checkpoint_from_bytes(buf[:len(buf) // 2])


def test_checkpoint_config_tampering(small_net):
    buf = bytearray(checkpoint_bytes(small_net))
    buf[6 + 12] += 1  # lstm_units
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bytes(buf))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_checkpoint_seed_sensitivity(seed):
    cfg = YieldNetConfig(lstm_units=3, lstm_layers=1, dense_units=3, static_dense_layers=1, post_concat_layers=1)
    a = hashlib.sha256(checkpoint_bytes(build(cfg, seed))).hexdigest()
    b = hashlib.sha256(checkpoint_bytes(build(cfg, seed + 1))).hexdigest()
    assert a != b
    assert a == hashlib.sha256(checkpoint_bytes(build(cfg, seed))).hexdigest()
