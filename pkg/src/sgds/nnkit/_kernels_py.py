"""Pure-NumPy MLP kernels.

Reference implementation of the tanh-MLP forward/VJP pair. The compiled
extension in ``_kernels.pyx`` mirrors these semantics for single vectors;
batched calls always come here (BLAS gemm is already the fast path).

Parameter layout is the canonical flat layout: for each layer l,
weight ``W_l`` with shape (out, in) in row-major order, then bias ``b_l``.
Hidden layers apply tanh, the output layer is affine.
"""

import numpy as np

BACKEND_NAME = "py"


def _layer_views(widths, flat):
    """Yield (W, b) array views over the flat parameter vector."""
    offset = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out]
        offset += fan_out
        yield w, b


def forward(widths, flat, x):
    """Forward pass for a single input vector. Returns the output vector."""
    h = x
    last = len(widths) - 2
    for i, (w, b) in enumerate(_layer_views(widths, flat)):
        h = w @ h + b
        if i != last:
            h = np.tanh(h)
    return h


def vjp(widths, flat, x, cotangent):
    """Gradients of <cotangent, forward(x)> for a single input vector.

    Returns (grad_input, grad_params_flat).
    """
    acts = forward_cache(widths, flat, x)
    return backward_from_cache(widths, flat, acts, cotangent)


def vjp_input(widths, flat, x, cotangent):
    """grad_input only; avoids materializing parameter gradients."""
    acts = forward_cache(widths, flat, x)
    g = np.asarray(cotangent, dtype=np.float64)
    layers = list(_layer_views(widths, flat))
    last = len(layers) - 1
    for i in range(last, -1, -1):
        w, _ = layers[i]
        if i != last:
            g = g * (1.0 - acts[i + 1] ** 2)
        g = g @ w
    return g


def forward_cache(widths, flat, x):
    """Forward pass keeping per-layer inputs; acts[i] feeds layer i."""
    acts = [x]
    h = x
    last = len(widths) - 2
    for i, (w, b) in enumerate(_layer_views(widths, flat)):
        h = w @ h + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def backward_from_cache(widths, flat, acts, cotangent):
    grad_flat = np.zeros_like(flat)
    g = np.asarray(cotangent, dtype=np.float64)
    layers = list(_layer_views(widths, flat))
    grad_views = list(_layer_views(widths, grad_flat))
    last = len(layers) - 1
    for i in range(last, -1, -1):
        w, _ = layers[i]
        gw, gb = grad_views[i]
        if i != last:
            # undo tanh: acts[i + 1] is the post-activation output
            g = g * (1.0 - acts[i + 1] ** 2)
        if acts[i].ndim == 1:
            gw += np.outer(g, acts[i])
            gb += g
        else:
            gw += g.T @ acts[i]
            gb += g.sum(axis=0)
        g = g @ w
    return g, grad_flat


def forward_batch(widths, flat, x):
    """Forward pass for a (batch, in) matrix. Returns (batch, out)."""
    h = x
    last = len(widths) - 2
    for i, (w, b) in enumerate(_layer_views(widths, flat)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
    return h


def forward_batch_cache(widths, flat, x):
    acts = [x]
    h = x
    last = len(widths) - 2
    for i, (w, b) in enumerate(_layer_views(widths, flat)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)
    return acts


# backward_from_cache handles both the vector and the batch case: the
# branches on ndim cover the only shape-dependent contractions.
backward_batch_from_cache = backward_from_cache
