# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tanh-MLP kernels for the single-vector hot path.

Same contract as ``_kernels_py``: canonical flat layout (per layer a
row-major (out, in) weight then a bias), tanh on hidden layers, affine
output layer. The sampler and the surprise-gradient path call these once
per network evaluation, so the win over NumPy is dispatch overhead, not
FLOPs.
"""

from libc.math cimport tanh

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "ext"


def forward(widths, flat, x):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w_arr = np.ascontiguousarray(widths, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_arr = np.ascontiguousarray(flat, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x_arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_layers = w_arr.shape[0] - 1
    cdef Py_ssize_t max_w = 0
    cdef Py_ssize_t i
    for i in range(w_arr.shape[0]):
        if w_arr[i] > max_w:
            max_w = w_arr[i]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf_a = np.empty(max_w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf_b = np.empty(max_w, dtype=np.float64)
    out = np.empty(int(w_arr[n_layers]), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = out
    cdef double* params = &p_arr[0]
    cdef double* cur = &x_arr[0]
    cdef double* nxt = &buf_a[0]
    cdef double* other = &buf_b[0]
    cdef double* tmp
    cdef cnp.int64_t* widths_p = &w_arr[0]
    cdef Py_ssize_t layer, r, c, fan_in, fan_out
    cdef Py_ssize_t off = 0
    cdef double acc
    cdef bint is_last
    with nogil:
        for layer in range(n_layers):
            fan_in = widths_p[layer]
            fan_out = widths_p[layer + 1]
            is_last = layer == n_layers - 1
            for r in range(fan_out):
                acc = params[off + fan_in * fan_out + r]  # bias
                for c in range(fan_in):
                    acc += params[off + r * fan_in + c] * cur[c]
                nxt[r] = acc if is_last else tanh(acc)
            off += fan_in * fan_out + fan_out
            # rotate buffers; the caller's input is only ever read
            tmp = cur
            cur = nxt
            nxt = other if layer == 0 else tmp
            other = nxt
        for r in range(widths_p[n_layers]):
            (&out_arr[0])[r] = cur[r]
    return out


def vjp_input(widths, flat, x, cotangent):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w_arr = np.ascontiguousarray(widths, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_arr = np.ascontiguousarray(flat, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x_arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c_arr = np.ascontiguousarray(cotangent, dtype=np.float64)
    cdef Py_ssize_t n_layers = w_arr.shape[0] - 1
    cdef Py_ssize_t total_act = 0
    cdef Py_ssize_t max_w = 0
    cdef Py_ssize_t i
    for i in range(w_arr.shape[0]):
        total_act += w_arr[i]
        if w_arr[i] > max_w:
            max_w = w_arr[i]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acts = np.empty(total_act, dtype=np.float64)
    grad_input = np.empty(int(w_arr[0]), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gin_arr = grad_input
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_buf = np.empty(max_w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_next = np.empty(max_w, dtype=np.float64)
    cdef double* params = &p_arr[0]
    cdef double* act = &acts[0]
    cdef double* g = &g_buf[0]
    cdef double* gn = &g_next[0]
    cdef double* tmp
    cdef cnp.int64_t* widths_p = &w_arr[0]
    cdef Py_ssize_t layer, r, c, fan_in, fan_out, off, a_in, a_out
    cdef double acc, gr
    with nogil:
        for r in range(widths_p[0]):
            act[r] = (&x_arr[0])[r]
        off = 0
        a_in = 0
        for layer in range(n_layers):
            fan_in = widths_p[layer]
            fan_out = widths_p[layer + 1]
            a_out = a_in + fan_in
            for r in range(fan_out):
                acc = params[off + fan_in * fan_out + r]
                for c in range(fan_in):
                    acc += params[off + r * fan_in + c] * act[a_in + c]
                act[a_out + r] = acc if layer == n_layers - 1 else tanh(acc)
            off += fan_in * fan_out + fan_out
            a_in = a_out
        for r in range(widths_p[n_layers]):
            g[r] = (&c_arr[0])[r]
        for layer in range(n_layers - 1, -1, -1):
            fan_in = widths_p[layer]
            fan_out = widths_p[layer + 1]
            off -= fan_in * fan_out + fan_out
            a_out = a_in
            a_in = a_out - fan_in
            if layer != n_layers - 1:
                for r in range(fan_out):
                    g[r] = g[r] * (1.0 - act[a_out + r] * act[a_out + r])
            for c in range(fan_in):
                gn[c] = 0.0
            for r in range(fan_out):
                gr = g[r]
                for c in range(fan_in):
                    gn[c] += gr * params[off + r * fan_in + c]
            tmp = g
            g = gn
            gn = tmp
        for r in range(widths_p[0]):
            (&gin_arr[0])[r] = g[r]
    return grad_input


def vjp(widths, flat, x, cotangent):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] w_arr = np.ascontiguousarray(widths, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_arr = np.ascontiguousarray(flat, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x_arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c_arr = np.ascontiguousarray(cotangent, dtype=np.float64)
    cdef Py_ssize_t n_layers = w_arr.shape[0] - 1
    cdef Py_ssize_t total_act = 0
    cdef Py_ssize_t max_w = 0
    cdef Py_ssize_t i
    for i in range(w_arr.shape[0]):
        total_act += w_arr[i]
        if w_arr[i] > max_w:
            max_w = w_arr[i]
    # activations stored contiguously: input first, then each layer output
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acts = np.empty(total_act, dtype=np.float64)
    grad = np.zeros(p_arr.shape[0], dtype=np.float64)
    grad_input = np.empty(int(w_arr[0]), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad_arr = grad
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gin_arr = grad_input
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_buf = np.empty(max_w, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g_next = np.empty(max_w, dtype=np.float64)
    cdef double* params = &p_arr[0]
    cdef double* act = &acts[0]
    cdef double* grad_p = &grad_arr[0]
    cdef double* g = &g_buf[0]
    cdef double* gn = &g_next[0]
    cdef double* tmp
    cdef cnp.int64_t* widths_p = &w_arr[0]
    cdef Py_ssize_t layer, r, c, fan_in, fan_out, off, a_in, a_out
    cdef double acc, gr
    with nogil:
        for r in range(widths_p[0]):
            act[r] = (&x_arr[0])[r]
        off = 0
        a_in = 0
        for layer in range(n_layers):
            fan_in = widths_p[layer]
            fan_out = widths_p[layer + 1]
            a_out = a_in + fan_in
            for r in range(fan_out):
                acc = params[off + fan_in * fan_out + r]
                for c in range(fan_in):
                    acc += params[off + r * fan_in + c] * act[a_in + c]
                act[a_out + r] = acc if layer == n_layers - 1 else tanh(acc)
            off += fan_in * fan_out + fan_out
            a_in = a_out
        # backward sweep
        for r in range(widths_p[n_layers]):
            g[r] = (&c_arr[0])[r]
        for layer in range(n_layers - 1, -1, -1):
            fan_in = widths_p[layer]
            fan_out = widths_p[layer + 1]
            off -= fan_in * fan_out + fan_out
            a_out = a_in
            a_in = a_out - fan_in
            if layer != n_layers - 1:
                for r in range(fan_out):
                    g[r] = g[r] * (1.0 - act[a_out + r] * act[a_out + r])
            for c in range(fan_in):
                gn[c] = 0.0
            for r in range(fan_out):
                gr = g[r]
                for c in range(fan_in):
                    grad_p[off + r * fan_in + c] += gr * act[a_in + c]
                    gn[c] += gr * params[off + r * fan_in + c]
                grad_p[off + fan_in * fan_out + r] += gr
            tmp = g
            g = gn
            gn = tmp
        for r in range(widths_p[0]):
            (&gin_arr[0])[r] = g[r]
    return grad_input, grad
