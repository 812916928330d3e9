import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harvestcast.data import generate_synthetic, normalize_arrays, split_dataset
from harvestcast.errors import ContractError, TrainingDiverged
from harvestcast.model import build
from harvestcast.train import TrainConfig, early_stop_decision, evaluate_loss, train_loop, write_history


def test_patience_two_example():
    assert not early_stop_decision([5, 4, 4.1], 2).stop
    d = early_stop_decision([5, 4, 4.1, 4.2], 2)
    assert d.stop and d.best_epoch == 2


def test_constant_loss_stops_at_51():
    losses = [1.0] * 60
    stops = [k for k in range(1, 61) if early_stop_decision(losses[:k], 50).stop]
    assert stops[0] == 51
    assert early_stop_decision(losses[:51], 50).best_epoch == 1


def test_tie_is_not_improvement():
    d = early_stop_decision([3.0, 2.0, 2.0, 2.0], 2)
    assert d.best_epoch == 2 and d.stop


def test_empty_history():
    with pytest.raises(ContractError):
        early_stop_decision([], 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 60))
def test_decreasing_never_stops(n, patience):
    losses = list(np.linspace(10, 1, n))
    assert not early_stop_decision(losses, patience).stop
    assert early_stop_decision(losses, patience).best_epoch == n


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=80), st.integers(1, 20))
def test_decision_matches_definition(losses, patience):
    d = early_stop_decision(losses, patience)
    assert losses[d.best_epoch - 1] == min(losses)
    assert min(losses) not in losses[:d.best_epoch - 1]
    assert d.stop == (len(losses) - d.best_epoch >= patience)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


@pytest.fixture(scope="module")
def tiny_data():
    return split_dataset(generate_synthetic(60, seed=2), 0)


def _run(cfg_net, data, **kw):
    net = build(cfg_net, seed=1)
    return train_loop(net, data, TrainConfig(seed=5, batch_size=16, **kw))


def test_history_and_best_snapshot(small_config, tiny_data):
    net, history = _run(small_config, tiny_data, max_epochs=6, patience=50)
    assert [h.epoch for h in history] == list(range(1, 7))
    assert all(np.isfinite(h.train_loss) and np.isfinite(h.val_loss) for h in history)
    va = tiny_data.indices("validation")
    s, d = normalize_arrays(tiny_data.static[va], tiny_data.dynamic[va], net.norm)
    assert evaluate_loss(net, d, s, tiny_data.yields[va]) == min(h.val_loss for h in history)


def test_training_is_deterministic(small_config, tiny_data):
    a, ha = _run(small_config, tiny_data, max_epochs=3)
    b, hb = _run(small_config, tiny_data, max_epochs=3)
    assert [(h.train_loss, h.val_loss) for h in ha] == [(h.train_loss, h.val_loss) for h in hb]
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_training_reduces_loss(small_config, tiny_data):
    # labels are raw kg/ha, so a tiny net moves slowly; direction is what matters here
    _, history = _run(small_config, tiny_data, max_epochs=30, learning_rate=0.05)
    assert history[-1].train_loss < history[0].train_loss - 20


def test_early_stop_ends_run(small_config, tiny_data):
    _, history = _run(small_config, tiny_data, max_epochs=500, patience=1, learning_rate=0.5)
    assert len(history) < 500
    assert early_stop_decision([h.val_loss for h in history], 1).stop


def test_divergence_restores_snapshot(small_config, tiny_data):
    net = build(small_config, seed=1)
    before = [p.data.copy() for p in net.parameters()]
    # the first update moves every weight by ~1e300, so the next forward pass overflows
    with pytest.raises(TrainingDiverged) as err:
        train_loop(net, tiny_data, TrainConfig(max_epochs=2, batch_size=8, learning_rate=1e300))
    assert (err.value.epoch, err.value.batch) == (1, 1)
    assert err.value.net is net
    for p, b in zip(net.parameters(), before):
        np.testing.assert_array_equal(p.data, b)


def test_requires_splits(small_config):
    with pytest.raises(ContractError):
        train_loop(build(small_config), generate_synthetic(20, 0), TrainConfig(max_epochs=1))


def test_write_history(tmp_path, small_config, tiny_data):
    _, history = _run(small_config, tiny_data, max_epochs=2)
    write_history(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,seconds"
    assert len(lines) == 3
