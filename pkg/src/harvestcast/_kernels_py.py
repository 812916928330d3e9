"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Signatures and expression order match the Cython module so results agree
to rounding; only the speed differs.
"""
import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


def lstm_gates_forward(z, c_prev, gates, c_out, tc_out, h_out):
    h = c_prev.shape[1]
    np.multiply(z, 0.5, out=gates)
    gates[:, 2 * h:3 * h] = z[:, 2 * h:3 * h]
    np.tanh(gates, out=gates)
    for sl in (slice(0, 2 * h), slice(3 * h, 4 * h)):
        gates[:, sl] *= 0.5
        gates[:, sl] += 0.5
    i = gates[:, :h]
    f = gates[:, h:2 * h]
    g = gates[:, 2 * h:3 * h]
    o = gates[:, 3 * h:]
    np.multiply(f, c_prev, out=c_out)
    c_out += i * g
    np.tanh(c_out, out=tc_out)
    np.multiply(o, tc_out, out=h_out)


def lstm_gates_backward(dh, dc_next, gates, c_prev, tc, dz, dc_prev):
    h = dh.shape[1]
    i = gates[:, :h]
    f = gates[:, h:2 * h]
    g = gates[:, 2 * h:3 * h]
    o = gates[:, 3 * h:]
    dct = dc_next + dh * o * (1.0 - tc * tc)
    dz[:, :h] = dct * g * i * (1.0 - i)
    dz[:, h:2 * h] = dct * c_prev * f * (1.0 - f)
    dz[:, 2 * h:3 * h] = dct * i * (1.0 - g * g)
    dz[:, 3 * h:] = dh * tc * o * (1.0 - o)
    np.multiply(dct, f, out=dc_prev)


def adam_update(p, g, m, v, lr, beta1, beta2, c1, c2, eps):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def selu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    neg = SELU_LAMBDA * (SELU_ALPHA * np.exp(np.minimum(x, 0.0)) - SELU_ALPHA)
    return np.where(x > 0.0, SELU_LAMBDA * x, neg)


def selu_backward(x, grad):
    x = np.asarray(x, dtype=np.float64)
    neg = grad * (SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    return np.where(x > 0.0, grad * SELU_LAMBDA, neg)


def _is_missing(v, nodata):
    if np.isnan(nodata):
        return np.isnan(v)
    return v == np.float32(nodata)


def sample_points(values, rr, cc, method, nodata):
    rows, cols = values.shape
    rr = np.asarray(rr, dtype=np.float64)
    cc = np.asarray(cc, dtype=np.float64)
    if method == 0:
        r0 = np.clip(np.floor(rr + 0.5).astype(np.intp), 0, rows - 1)
        c0 = np.clip(np.floor(cc + 0.5).astype(np.intp), 0, cols - 1)
        v = values[r0, c0]
        valid = ~_is_missing(v, nodata)
        return np.where(valid, v.astype(np.float64), 0.0), valid

    r = np.clip(rr, 0.0, rows - 1)
    c = np.clip(cc, 0.0, cols - 1)
    r0 = np.clip(np.minimum(np.floor(r).astype(np.intp), rows - 2), 0, None)
    c0 = np.clip(np.minimum(np.floor(c).astype(np.intp), cols - 2), 0, None)
    r1 = np.minimum(r0 + 1, rows - 1)
    c1 = np.minimum(c0 + 1, cols - 1)
    fr = r - r0
    fc = c - c0
    cv = np.stack([values[r0, c0], values[r0, c1], values[r1, c0], values[r1, c1]])
    ok = ~_is_missing(cv, nodata)
    cv = cv.astype(np.float64)
    w = np.stack([(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc])
    blend = cv[0] * w[0] + cv[1] * w[1] + cv[2] * w[2] + cv[3] * w[3]

    cr = np.stack([r0, r0, r1, r1]).astype(np.float64)
    ccol = np.stack([c0, c1, c0, c1]).astype(np.float64)
    dist = (r - cr) * (r - cr) + (c - ccol) * (c - ccol)
    dist = np.where(ok, dist, np.inf)
    best = np.argmin(dist, axis=0)  # first minimum wins, same tie rule as the C loop
    nearest = cv[best, np.arange(cv.shape[1])]

    all_ok = ok.all(axis=0)
    any_ok = ok.any(axis=0)
    out = np.where(all_ok, blend, np.where(any_ok, nearest, 0.0))
    return out, any_ok
