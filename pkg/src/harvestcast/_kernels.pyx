# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: fused LSTM gate math, SELU and batched grid sampling.

Every routine mirrors ``_kernels_py`` expression for expression so the two
backends agree to rounding. Keep them in lockstep when editing either one.
"""
from libc.math cimport floor, isnan, sqrt

import numpy as np

cdef double SELU_ALPHA = 1.6732632423543772
cdef double SELU_LAMBDA = 1.0507009873554805


def lstm_gates_forward(z, c_prev, gates, c_out, tc_out, h_out):
    # Transcendentals go through numpy's vectorized tanh (much faster than
    # scalar libm); the gate algebra is fused in the loops below.
    cdef Py_ssize_t h = c_prev.shape[1]
    np.multiply(z, 0.5, out=gates)
    gates[:, 2 * h:3 * h] = z[:, 2 * h:3 * h]
    np.tanh(gates, out=gates)
    _combine_cell(c_prev, gates, c_out)
    np.tanh(c_out, out=tc_out)
    _emit_hidden(gates, tc_out, h_out)


cdef void _combine_cell(const double[:, ::1] c_prev, double[:, ::1] gates,
                        double[:, ::1] c_out) noexcept:
    cdef Py_ssize_t n = c_prev.shape[0], h = c_prev.shape[1]
    cdef Py_ssize_t r, j
    cdef double i, f
    with nogil:
        for r in range(n):
            for j in range(h):
                i = 0.5 + 0.5 * gates[r, j]
                f = 0.5 + 0.5 * gates[r, h + j]
                gates[r, j] = i
                gates[r, h + j] = f
                gates[r, 3 * h + j] = 0.5 + 0.5 * gates[r, 3 * h + j]
                c_out[r, j] = f * c_prev[r, j] + i * gates[r, 2 * h + j]


cdef void _emit_hidden(const double[:, ::1] gates, const double[:, ::1] tc,
                       double[:, ::1] h_out) noexcept:
    cdef Py_ssize_t n = tc.shape[0], h = tc.shape[1]
    cdef Py_ssize_t r, j
    with nogil:
        for r in range(n):
            for j in range(h):
                h_out[r, j] = gates[r, 3 * h + j] * tc[r, j]


def lstm_gates_backward(const double[:, ::1] dh, const double[:, ::1] dc_next,
                        const double[:, ::1] gates, const double[:, ::1] c_prev,
                        const double[:, ::1] tc, double[:, ::1] dz,
                        double[:, ::1] dc_prev):
    cdef Py_ssize_t n = dh.shape[0], h = dh.shape[1]
    cdef Py_ssize_t r, j
    cdef double i, f, g, o, t, d, dct
    with nogil:
        for r in range(n):
            for j in range(h):
                i = gates[r, j]
                f = gates[r, h + j]
                g = gates[r, 2 * h + j]
                o = gates[r, 3 * h + j]
                t = tc[r, j]
                d = dh[r, j]
                dct = dc_next[r, j] + d * o * (1.0 - t * t)
                dz[r, j] = dct * g * i * (1.0 - i)
                dz[r, h + j] = dct * c_prev[r, j] * f * (1.0 - f)
                dz[r, 2 * h + j] = dct * i * (1.0 - g * g)
                dz[r, 3 * h + j] = d * t * o * (1.0 - o)
                dc_prev[r, j] = dct * f


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double c1, double c2, double eps):
    """In-place Adam update on flat buffers; c1, c2 are the bias corrections."""
    cdef Py_ssize_t k
    cdef double gk
    with nogil:
        for k in range(p.shape[0]):
            gk = g[k]
            m[k] = m[k] * beta1 + (1.0 - beta1) * gk
            v[k] = v[k] * beta2 + (1.0 - beta2) * (gk * gk)
            p[k] = p[k] - lr * (m[k] / c1) / (sqrt(v[k] / c2) + eps)


def selu_forward(x):
    # exp comes from numpy so both backends round identically
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    e = np.exp(np.minimum(xv, 0.0))
    cdef const double[::1] ev = e
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t k
    cdef double v
    with nogil:
        for k in range(xv.shape[0]):
            v = xv[k]
            if v > 0.0:
                ov[k] = SELU_LAMBDA * v
            else:
                ov[k] = SELU_LAMBDA * (SELU_ALPHA * ev[k] - SELU_ALPHA)
    return out.reshape(np.shape(x))


def selu_backward(x, grad):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef const double[::1] gv = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    e = np.exp(np.minimum(xv, 0.0))
    cdef const double[::1] ev = e
    out = np.empty(xv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t k
    cdef double v
    with nogil:
        for k in range(xv.shape[0]):
            v = xv[k]
            if v > 0.0:
                ov[k] = gv[k] * SELU_LAMBDA
            else:
                ov[k] = gv[k] * (SELU_LAMBDA * SELU_ALPHA * ev[k])
    return out.reshape(np.shape(x))


cdef inline bint _missing(float v, float nodata, bint nodata_nan) noexcept nogil:
    if nodata_nan:
        return isnan(v)
    return v == nodata


def sample_points(const float[:, ::1] values, const double[::1] rr,
                  const double[::1] cc, int method, float nodata):
    """Sample at fractional (row, col) indices already checked against the extent.

    ``method`` is 0 for nearest, 1 for bilinear. Returns ``(out, valid)``.
    """
    cdef Py_ssize_t n = rr.shape[0], rows = values.shape[0], cols = values.shape[1]
    out = np.zeros(n, dtype=np.float64)
    valid = np.zeros(n, dtype=np.uint8)
    cdef double[::1] ov = out
    cdef unsigned char[::1] okv = valid
    cdef bint nodata_nan = isnan(nodata)
    cdef Py_ssize_t k, r0, c0, r1, c1, q, best
    cdef double r, c, fr, fc, d, dbest
    cdef float v
    cdef double cv[4]
    cdef double cw[4]
    cdef double cr[4]
    cdef double ccol[4]
    cdef bint ok[4]
    cdef bint all_ok
    with nogil:
        for k in range(n):
            r = rr[k]
            c = cc[k]
            if method == 0:
                r0 = <Py_ssize_t>floor(r + 0.5)
                c0 = <Py_ssize_t>floor(c + 0.5)
                if r0 < 0:
                    r0 = 0
                if r0 > rows - 1:
                    r0 = rows - 1
                if c0 < 0:
                    c0 = 0
                if c0 > cols - 1:
                    c0 = cols - 1
                v = values[r0, c0]
                if not _missing(v, nodata, nodata_nan):
                    ov[k] = v
                    okv[k] = 1
                continue
            if r < 0.0:
                r = 0.0
            if r > rows - 1:
                r = rows - 1
            if c < 0.0:
                c = 0.0
            if c > cols - 1:
                c = cols - 1
            r0 = <Py_ssize_t>floor(r)
            c0 = <Py_ssize_t>floor(c)
            if r0 > rows - 2:
                r0 = rows - 2
            if r0 < 0:
                r0 = 0
            if c0 > cols - 2:
                c0 = cols - 2
            if c0 < 0:
                c0 = 0
            r1 = r0 + 1 if r0 + 1 < rows else r0
            c1 = c0 + 1 if c0 + 1 < cols else c0
            fr = r - r0
            fc = c - c0
            cv[0] = values[r0, c0]
            cv[1] = values[r0, c1]
            cv[2] = values[r1, c0]
            cv[3] = values[r1, c1]
            cw[0] = (1.0 - fr) * (1.0 - fc)
            cw[1] = (1.0 - fr) * fc
            cw[2] = fr * (1.0 - fc)
            cw[3] = fr * fc
            cr[0] = r0
            cr[1] = r0
            cr[2] = r1
            cr[3] = r1
            ccol[0] = c0
            ccol[1] = c1
            ccol[2] = c0
            ccol[3] = c1
            all_ok = True
            for q in range(4):
                ok[q] = not _missing(<float>cv[q], nodata, nodata_nan)
                if not ok[q]:
                    all_ok = False
            if all_ok:
                ov[k] = cv[0] * cw[0] + cv[1] * cw[1] + cv[2] * cw[2] + cv[3] * cw[3]
                okv[k] = 1
                continue
            best = -1
            dbest = 0.0
            for q in range(4):
                if ok[q]:
                    d = (r - cr[q]) * (r - cr[q]) + (c - ccol[q]) * (c - ccol[q])
                    if best < 0 or d < dbest:
                        best = q
                        dbest = d
            if best >= 0:
                ov[k] = cv[best]
                okv[k] = 1
    return out, valid.view(np.bool_)
