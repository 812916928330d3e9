"""The two-path yield network and its checkpoint format.

Dynamic path: stacked LSTMs over the monthly weather sequence, last hidden
state only. Static path: SELU dense layers over the soil/location vector.
The two are concatenated and run through a SELU trunk down to one output.

Checkpoint layout (all little-endian)::

    b"YNET"  u16 version
    config   8 x u32 (time_steps, dynamic_features, static_features,
             lstm_units, lstm_layers, dense_units, static_dense_layers,
             post_concat_layers), f64 learning_rate
    norm     u8 present; if 1: static mean, static std, dynamic mean,
             dynamic std (f64 each), then one u8 drop flag per static
             feature followed by one per dynamic feature
    params   u64 count, then count x f64 in ``YieldNet.parameters()`` order
    trailer  u64 total file length in bytes, trailer included
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np

from .data import NormStats
from .errors import DimensionError, FormatError, IntegrityError, NumericError
from .nn import init_params
from .tensor import Tensor, concat, reshape

MAGIC = b"YNET"
VERSION = 1
_CONFIG_FMT = "<8Id"


@dataclass(frozen=True)
class YieldNetConfig:
    time_steps: int = 8
    dynamic_features: int = 3
    static_features: int = 65
    lstm_units: int = 280
    lstm_layers: int = 3
    dense_units: int = 100
    static_dense_layers: int = 2
    post_concat_layers: int = 5
    learning_rate: float = 0.0005

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "learning_rate" and (not isinstance(value, int) or value < 1):
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def layer_shapes(self):
        shapes = []
        n_in = self.dynamic_features
        for k in range(self.lstm_layers):
            shapes.append(("lstm", n_in, self.lstm_units, k < self.lstm_layers - 1))
            n_in = self.lstm_units
        n_in = self.static_features
        for _ in range(self.static_dense_layers):
            shapes.append(("dense", n_in, self.dense_units, "selu"))
            n_in = self.dense_units
        n_in = self.lstm_units + self.dense_units
        for _ in range(self.post_concat_layers):
            shapes.append(("dense", n_in, self.dense_units, "selu"))
            n_in = self.dense_units
        shapes.append(("dense", n_in, 1, "selu"))
        return shapes


class YieldNet:
    def __init__(self, config, layers, norm=None):
        self.config = config
        k, s = config.lstm_layers, config.static_dense_layers
        self.lstm = layers[:k]
        self.static = layers[k:k + s]
        self.trunk = layers[k + s:-1]
        self.head = layers[-1]
        self.norm = norm

    @property
    def layers(self):
        return [*self.lstm, *self.static, *self.trunk, self.head]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def layer_param_counts(self):
        return [sum(p.size for p in layer.parameters()) for layer in self.layers]

    def forward(self, dynamic, static, trace=None):
        """Raw network output, shape (batch,), for normalized batched inputs.

        If ``trace`` is a list, ``(name, per-sample shape)`` pairs are
        appended for each intermediate tensor.
        """
        cfg = self.config
        if dynamic.ndim != 3 or dynamic.shape[1:] != (cfg.time_steps, cfg.dynamic_features):
            raise DimensionError(
                f"dynamic input must be (batch, {cfg.time_steps}, {cfg.dynamic_features}), got {dynamic.shape}")
        if static.ndim != 2 or static.shape[1] != cfg.static_features:
            raise DimensionError(f"static input must be (batch, {cfg.static_features}), got {static.shape}")
        if dynamic.shape[0] != static.shape[0]:
            raise DimensionError(f"batch sizes differ: {dynamic.shape[0]} vs {static.shape[0]}")

        def note(name, t):
            if trace is not None:
                trace.append((name, t.shape[1:]))

        a = dynamic
        note("dynamic_input", a)
        for k, layer in enumerate(self.lstm):
            a = layer(a)
            note(f"lstm{k + 1}", a)
        s = static
        note("static_input", s)
        for k, layer in enumerate(self.static):
            s = layer(s)
            note(f"static{k + 1}", s)
        x = concat(a, s)
        note("concat", x)
        for k, layer in enumerate(self.trunk):
            x = layer(x)
            note(f"trunk{k + 1}", x)
        x = self.head(x)
        note("output", x)
        return reshape(x, (x.shape[0],))

    def predict_batch(self, dynamic, static):
        """Raw outputs for normalized arrays of shape (N, T, F) and (N, S)."""
        dyn = np.asarray(dynamic, dtype=np.float64)
        sta = np.asarray(static, dtype=np.float64)
        if not (np.isfinite(dyn).all() and np.isfinite(sta).all()):
            raise NumericError("non-finite model input")
        return self.forward(Tensor(dyn), Tensor(sta)).data.copy()

    def predict(self, dynamic, static):
        """Raw forecast for one normalized sample: dynamic (T, F), static (S,)."""
        dyn = np.asarray(dynamic, dtype=np.float64)
        sta = np.asarray(static, dtype=np.float64)
        cfg = self.config
        if dyn.shape != (cfg.time_steps, cfg.dynamic_features) or sta.shape != (cfg.static_features,):
            raise DimensionError(
                f"expected dynamic ({cfg.time_steps}, {cfg.dynamic_features}) and static "
                f"({cfg.static_features},), got {dyn.shape} and {sta.shape}")
        return float(self.predict_batch(dyn[None], sta[None])[0])


def serve_yield(raw):
    """Reported yield: raw output clamped at zero. Metrics use raw outputs."""
    return np.maximum(raw, 0.0)


def build(config=None, seed=0):
    config = config or YieldNetConfig()
    return YieldNet(config, init_params(seed, config.layer_shapes()))


def param_count(net):
    return sum(net.layer_param_counts())


def expected_param_count(config):
    """Closed-form count from layer widths alone (independent of a built net)."""
    total = 0
    for spec in config.layer_shapes():
        if spec[0] == "lstm":
            _, n_in, h, _ = spec
            total += 4 * (n_in + h) * h + 4 * h
        else:
            _, n_in, n_out, _ = spec
            total += n_in * n_out + n_out
    return total


def checkpoint_bytes(net):
    cfg = net.config
    parts = [MAGIC, struct.pack("<H", VERSION)]
    parts.append(struct.pack(
        _CONFIG_FMT, cfg.time_steps, cfg.dynamic_features, cfg.static_features, cfg.lstm_units,
        cfg.lstm_layers, cfg.dense_units, cfg.static_dense_layers, cfg.post_concat_layers,
        cfg.learning_rate))
    if net.norm is None:
        parts.append(b"\x00")
    else:
        n = net.norm
        parts.append(b"\x01")
        for arr in (n.static_mean, n.static_std, n.dynamic_mean, n.dynamic_std):
            parts.append(np.asarray(arr, dtype="<f8").tobytes())
        parts.append(np.asarray(n.static_dropped, dtype=np.uint8).tobytes())
        parts.append(np.asarray(n.dynamic_dropped, dtype=np.uint8).tobytes())
    params = net.parameters()
    parts.append(struct.pack("<Q", sum(p.size for p in params)))
    for p in params:
        parts.append(p.data.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", len(body) + 8)


def save_checkpoint(net, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def checkpoint_from_bytes(buf):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("not a YNET checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(buf) < 8 + 6:
        raise IntegrityError("checkpoint truncated")
    (declared,) = struct.unpack_from("<Q", buf, len(buf) - 8)
    if declared != len(buf):
        raise IntegrityError(f"checkpoint length {len(buf)} does not match recorded {declared}")
    pos = 6

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf) - 8:
            raise IntegrityError("checkpoint truncated")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    fields = struct.unpack(_CONFIG_FMT, take(struct.calcsize(_CONFIG_FMT)))
    try:
        config = YieldNetConfig(*fields)
    except ValueError as exc:
        raise FormatError(f"invalid config block: {exc}") from exc

    norm = None
    flag = take(1)[0]
    if flag not in (0, 1):
        raise FormatError(f"invalid normalization flag {flag}")
    if flag == 1:
        ns = config.static_features
        nd = config.time_steps * config.dynamic_features
        dshape = (config.time_steps, config.dynamic_features)

        def floats(count):
            return np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)

        s_mean, s_std = floats(ns), floats(ns)
        d_mean, d_std = floats(nd).reshape(dshape), floats(nd).reshape(dshape)
        s_drop = np.frombuffer(take(ns), dtype=np.uint8).astype(bool)
        d_drop = np.frombuffer(take(nd), dtype=np.uint8).astype(bool).reshape(dshape)
        norm = NormStats(s_mean, s_std, d_mean, d_std, s_drop, d_drop)

    (count,) = struct.unpack("<Q", take(8))
    if count != expected_param_count(config):
        raise FormatError(f"parameter count {count} does not match config ({expected_param_count(config)})")
    values = np.frombuffer(take(8 * count), dtype="<f8")
    if pos != len(buf) - 8:
        raise IntegrityError("trailing bytes after parameter block")
    if not np.isfinite(values).all():
        raise NumericError("checkpoint contains non-finite parameters")

    net = build(config, seed=0)
    offset = 0
    for p in net.parameters():
        p.data[...] = values[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    net.norm = norm
    return net
