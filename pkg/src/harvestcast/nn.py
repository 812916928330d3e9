"""Layer primitives: SELU, fully connected layers and LSTM.

LSTM gate blocks are stored in the order (input, forget, candidate, output)
along the ``4*h`` axis of ``Wx``, ``Wh`` and ``b``. The cell is the standard
one without peepholes::

    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c_t = f * c_prev + i * g
    h_t = o * tanh(c_t)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import Tensor, add, matmul, record, slice_last


@dataclass(frozen=True)
class SeluConstants:
    alpha: float = 1.6732632423543772
    lambda_: float = 1.0507009873554805


SELU = SeluConstants()


def selu(x):
    xd = x.data
    return record("selu", kernels.selu_forward(xd), (x,), lambda g: (kernels.selu_backward(xd, g),))


@dataclass
class DenseLayer:
    W: Tensor
    b: Tensor
    activation: str = "selu"

    def __post_init__(self):
        if self.activation not in ("selu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"dense layer: W {self.W.shape} and b {self.b.shape} disagree")

    @property
    def in_features(self):
        return self.W.shape[0]

    @property
    def out_features(self):
        return self.W.shape[1]

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, x):
        return dense_forward(self, x)


def dense_forward(layer, x):
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise DimensionError(f"dense layer expects (batch, {layer.in_features}) input, got {x.shape}")
    y = add(matmul(x, layer.W), layer.b)
    return selu(y) if layer.activation == "selu" else y


@dataclass
class LstmLayer:
    Wx: Tensor
    Wh: Tensor
    b: Tensor
    return_sequences: bool = False

    def __post_init__(self):
        h = self.Wh.shape[0]
        if self.Wh.shape != (h, 4 * h) or self.Wx.ndim != 2 or self.Wx.shape[1] != 4 * h \
                or self.b.shape != (4 * h,):
            raise DimensionError(
                f"lstm layer: inconsistent Wx {self.Wx.shape}, Wh {self.Wh.shape}, b {self.b.shape}")

    @property
    def hidden_size(self):
        return self.Wh.shape[0]

    @property
    def input_size(self):
        return self.Wx.shape[0]

    def parameters(self):
        return [self.Wx, self.Wh, self.b]

    def __call__(self, seq):
        return lstm_sequence(self, seq)


def lstm_step(layer, x_t, h_prev, c_prev):
    """One gated update; returns ``(h_t, c_t)``."""
    h = layer.hidden_size
    n = x_t.shape[0]
    if x_t.ndim != 2 or x_t.shape[1] != layer.input_size:
        raise DimensionError(f"lstm_step: x_t must be (batch, {layer.input_size}), got {x_t.shape}")
    if h_prev.shape != (n, h) or c_prev.shape != (n, h):
        raise DimensionError(f"lstm_step: states must be ({n}, {h}), got {h_prev.shape} and {c_prev.shape}")
    Wx, Wh, b = layer.Wx.data, layer.Wh.data, layer.b.data
    xd, hd, cd = x_t.data, h_prev.data, c_prev.data
    z = xd @ Wx
    z += b
    z += hd @ Wh
    gates = np.empty((n, 4 * h))
    hc = np.empty((n, 2 * h))
    c_new = np.empty((n, h))
    tc = np.empty((n, h))
    h_new = np.empty((n, h))
    kernels.lstm_gates_forward(z, cd, gates, c_new, tc, h_new)
    hc[:, :h] = h_new
    hc[:, h:] = c_new

    def backward(g):
        dh = np.ascontiguousarray(g[:, :h])
        dc = np.ascontiguousarray(g[:, h:])
        dz = np.empty((n, 4 * h))
        dc_prev = np.empty((n, h))
        kernels.lstm_gates_backward(dh, dc, gates, cd, tc, dz, dc_prev)
        return (
            dz @ Wx.T if x_t.requires_grad else None,
            dz @ Wh.T if h_prev.requires_grad else None,
            dc_prev,
            xd.T @ dz,
            hd.T @ dz,
            dz.sum(axis=0),
        )

    out = record("lstm_step", hc, (x_t, h_prev, c_prev, layer.Wx, layer.Wh, layer.b), backward)
    return slice_last(out, 0, h), slice_last(out, h, 2 * h)


def lstm_sequence(layer, seq):
    """Run the layer over ``seq`` of shape (batch, T, in) from zero state.

    Returns (batch, T, h) when ``layer.return_sequences`` else (batch, h).
    The whole recurrence is one tape node; its backward is truncation-free BPTT.
    """
    if seq.ndim != 3 or seq.shape[2] != layer.input_size:
        raise DimensionError(f"lstm_sequence: expected (batch, T, {layer.input_size}), got {seq.shape}")
    n, steps, n_in = seq.shape
    if steps == 0:
        raise ContractError("lstm_sequence: empty sequence (T = 0)")
    h = layer.hidden_size
    Wx, Wh, b = layer.Wx.data, layer.Wh.data, layer.b.data
    x_tb = np.ascontiguousarray(seq.data.transpose(1, 0, 2)).reshape(steps * n, n_in)

    z_all = (x_tb @ Wx).reshape(steps, n, 4 * h)
    z_all += b
    gates = np.empty((steps, n, 4 * h))
    cs = np.zeros((steps + 1, n, h))
    hs = np.zeros((steps + 1, n, h))
    tcs = np.empty((steps, n, h))
    rec = np.empty((n, 4 * h))
    for t in range(steps):
        np.matmul(hs[t], Wh, out=rec)
        z_all[t] += rec
        kernels.lstm_gates_forward(z_all[t], cs[t], gates[t], cs[t + 1], tcs[t], hs[t + 1])
    del z_all

    if layer.return_sequences:
        out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))
    else:
        out = hs[steps].copy()

    def backward(g):
        dz = np.empty((steps, n, 4 * h))
        dh_next = np.zeros((n, h))
        dc = np.zeros((n, h))
        dc_prev = np.empty((n, h))
        for t in range(steps - 1, -1, -1):
            if layer.return_sequences:
                dh = g[:, t, :] + dh_next
            elif t == steps - 1:
                dh = np.ascontiguousarray(g)
            else:
                dh = dh_next
            kernels.lstm_gates_backward(dh, dc, gates[t], cs[t], tcs[t], dz[t], dc_prev)
            dc, dc_prev = dc_prev, dc
            if t > 0:
                dh_next = dz[t] @ Wh.T
        dz_flat = dz.reshape(steps * n, 4 * h)
        dseq = None
        if seq.requires_grad:
            dseq = np.ascontiguousarray((dz_flat @ Wx.T).reshape(steps, n, n_in).transpose(1, 0, 2))
        return (
            dseq,
            x_tb.T @ dz_flat,
            hs[:steps].reshape(steps * n, h).T @ dz_flat,
            dz_flat.sum(axis=0),
        )

    return record("lstm_sequence", out, (seq, layer.Wx, layer.Wh, layer.b), backward)


def _param(arr):
    return Tensor(arr, requires_grad=True)


def _orthogonal(rng, rows, cols):
    """Matrix with orthonormal rows (rows <= cols) or columns, QR-based."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q.T if rows < cols else q


def init_params(seed, shapes):
    """Build layers for ``shapes`` deterministically from ``seed``.

    ``shapes`` is a sequence of ``("dense", in, out, activation)`` and
    ``("lstm", in, hidden, return_sequences)`` tuples, consumed in order
    from a single generator:

    * dense: W ~ N(0, 1/fan_in), b = 0 (keeps SELU stacks self-normalizing)
    * lstm: Wx ~ U(+-sqrt(6 / (in + 4h))), Wh orthogonal, b = 0 except the
      forget-gate slice, which is 1
    """
    rng = np.random.default_rng(seed)
    layers = []
    for spec in shapes:
        kind = spec[0]
        if kind == "dense":
            _, n_in, n_out, act = spec
            W = rng.standard_normal((n_in, n_out)) * np.sqrt(1.0 / n_in)
            layers.append(DenseLayer(_param(W), _param(np.zeros(n_out)), act))
        elif kind == "lstm":
            _, n_in, h, seqs = spec
            limit = np.sqrt(6.0 / (n_in + 4 * h))
            Wx = rng.uniform(-limit, limit, (n_in, 4 * h))
            Wh = _orthogonal(rng, h, 4 * h)
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            layers.append(LstmLayer(_param(Wx), _param(Wh), _param(b), seqs))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return layers
