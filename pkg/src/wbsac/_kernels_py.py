"""Pure-numpy kernels; reference semantics for ``_kernels.pyx``.

Parameter layout for an MLP with ``sizes = (n0, n1, ..., nL)``: for each
layer, a row-major ``(n_in, n_out)`` weight block followed by an ``n_out``
bias block, all in one flat float64 vector. Hidden layers use ReLU, the
output layer is linear.
"""

import numpy as np


def layer_views(flat, sizes):
    views = []
    off = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = flat[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = flat[off:off + n_out]
        off += n_out
        views.append((W, b))
    return views


def mlp_forward(flat, sizes, x):
    """Return the list of activations ``[x, h1, ..., out]`` for a 2-d batch ``x``."""
    acts = [x]
    h = x
    layers = layer_views(flat, sizes)
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        h = h @ W
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def mlp_backward(flat, sizes, acts, dout, grad_out, need_dx):
    """Backpropagate ``dout`` (gradient w.r.t. the network output).

    Writes parameter gradients into ``grad_out`` unless it is None; returns
    the input gradient when ``need_dx`` is set, else None.
    """
    layers = layer_views(flat, sizes)
    grads = layer_views(grad_out, sizes) if grad_out is not None else None
    d = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if grads is not None:
            gW, gb = grads[i]
            np.matmul(acts[i].T, d, out=gW)
            np.sum(d, axis=0, out=gb)
        if i == 0 and not need_dx:
            return None
        d = d @ W.T
        if i > 0:
            d *= acts[i] > 0.0
    return d


def adam_update(flat, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update; ``step`` is the 1-based count after this update."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    flat -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def polyak_update(target, online, tau):
    target *= 1.0 - tau
    target += tau * online
