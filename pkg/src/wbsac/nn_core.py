"""Small feed-forward networks with hand-written backprop, Adam and polyak averaging.

Parameters of one network live in a single contiguous float64 vector so the
optimizer and target updates are single fused passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    """A loss or gradient became NaN/inf during training."""


def n_params(sizes) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    sizes: tuple
    flat: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n_params(self.sizes),):
            raise ValueError(f"flat parameter vector has shape {self.flat.shape}, "
                             f"expected ({n_params(self.sizes)},)")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MlpParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, layer by layer."""
        sizes = tuple(int(s) for s in sizes)
        parts = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            parts.append(rng.uniform(-bound, bound, size=n_in * n_out))
            parts.append(rng.uniform(-bound, bound, size=n_out))
        return cls(sizes, np.concatenate(parts))

    @classmethod
    def zeros(cls, sizes) -> "MlpParams":
        return cls(sizes, np.zeros(n_params(sizes)))

    @classmethod
    def from_layers(cls, layers) -> "MlpParams":
        """Build from a list of ``(W, b)`` with ``W`` shaped ``(n_in, n_out)``."""
        sizes = [np.shape(layers[0][0])[0]]
        parts = []
        for W, b in layers:
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if W.shape[0] != sizes[-1] or b.shape != (W.shape[1],):
                raise ValueError("layer shapes do not compose")
            sizes.append(W.shape[1])
            parts += [W.ravel(), b]
        return cls(tuple(sizes), np.concatenate(parts))

    @property
    def layers(self):
        return kernels.layer_views(self.flat, self.sizes)

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, self.flat.copy())

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.flat)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, flat: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(flat), np.zeros_like(flat), **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2, self.eps)


@dataclass
class ForwardCache:
    acts: list = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    return np.ascontiguousarray(x), single


def forward(params: MlpParams, x) -> ForwardCache:
    """Forward pass over a 2-d batch, keeping activations for :func:`backward`."""
    x, _ = _as_batch(x)
    if x.shape[1] != params.sizes[0]:
        raise ValueError(f"input width {x.shape[1]} does not match network input {params.sizes[0]}")
    return ForwardCache(kernels.mlp_forward(params.flat, params.sizes, x))


def backward(params: MlpParams, cache: ForwardCache, dout, grad_out=None, need_dx=False):
    dout = np.ascontiguousarray(dout, dtype=np.float64)
    return kernels.mlp_backward(params.flat, params.sizes, cache.acts, dout, grad_out, need_dx)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x, single = _as_batch(x)
    out = forward(params, x).output
    return out[0] if single else out


def value_and_grad(params: MlpParams, loss, x):
    """Evaluate ``loss`` on the network output and backpropagate it.

    ``loss(output) -> (value, d value / d output)``. Returns ``(value, grad)``
    with ``grad`` laid out like ``params.flat``.
    """
    cache = forward(params, x)
    value, dout = loss(cache.output)
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is not finite: {value}")
    grad = params.zeros_like()
    backward(params, cache, np.reshape(dout, cache.output.shape), grad_out=grad)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("gradient is not finite")
    return value, grad


def adam_step(params: MlpParams, grads, state: AdamState, lr: float, inplace=False):
    """Bias-corrected Adam. Returns new ``(params, state)`` unless ``inplace``."""
    grads = np.ascontiguousarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("gradient / optimizer state shape does not match parameters")
    if not inplace:
        params, state = params.copy(), state.copy()
    adam_update_array(params.flat, grads, state, lr)
    return params, state


def adam_update_array(flat: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """In-place Adam step on any contiguous float64 array (e.g. a log-temperature)."""
    state.step += 1
    kernels.adam_update(flat, grads, state.m, state.v, float(lr),
                        state.beta1, state.beta2, state.eps, state.step)


def polyak_update(target: MlpParams, online: MlpParams, tau: float, inplace=False) -> MlpParams:
    """``target <- tau * online + (1 - tau) * target`` elementwise."""
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch: {target.sizes} vs {online.sizes}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not inplace:
        target = target.copy()
    kernels.polyak_update(target.flat, online.flat, float(tau))
    return target


def save_arrays(path, arrays: dict, meta: dict):
    """Write a versioned ``.npz`` checkpoint: named arrays plus a JSON metadata record."""
    meta = dict(meta, format_version=CHECKPOINT_VERSION)
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')} in {path}")
        arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return arrays, meta


def save_params(path, params: MlpParams, state: AdamState | None = None):
    arrays = {"flat": params.flat}
    meta = {"sizes": list(params.sizes)}
    if state is not None:
        arrays.update(m=state.m, v=state.v)
        meta.update(step=state.step, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    save_arrays(path, arrays, meta)


def load_params(path):
    arrays, meta = load_arrays(path)
    params = MlpParams(tuple(meta["sizes"]), arrays["flat"])
    state = None
    if "m" in arrays:
        state = AdamState(arrays["m"], arrays["v"], meta["step"], meta["beta1"], meta["beta2"], meta["eps"])
    return params, state
