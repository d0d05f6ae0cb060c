"""Multilayer perceptrons with an explicit value-and-gradient contract.

The network family is fixed: affine layers with tanh on hidden layers and
an identity output layer. Gradients are hand-derived reverse mode and are
validated against central finite differences in the test suite.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths from input to output; tanh hidden, identity output."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("MLPSpec needs at least input and output widths")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    def manifest(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Canonical tensor order: layer 0 weight, layer 0 bias, layer 1 ..."""
        entries = []
        for i, (fan_in, fan_out) in enumerate(
            zip(self.layer_widths[:-1], self.layer_widths[1:])
        ):
            entries.append((f"layer{i}.weight", (fan_out, fan_in)))
            entries.append((f"layer{i}.bias", (fan_out,)))
        return tuple(entries)

    def num_params(self) -> int:
        return sum(
            fan_in * fan_out + fan_out
            for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:])
        )

    def widths_array(self) -> np.ndarray:
        return np.asarray(self.layer_widths, dtype=np.int64)


@dataclass
class ParamVector:
    """Flat float64 parameter store with an ordered (name, shape) manifest."""

    values: np.ndarray
    manifest: tuple[tuple[str, tuple[int, ...]], ...]
    # populated when loaded from a checkpoint; not part of value identity
    spec_widths: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.manifest = tuple((name, tuple(shape)) for name, shape in self.manifest)
        expected = sum(int(np.prod(shape)) for _, shape in self.manifest)
        if expected != self.values.size:
            raise ValueError(
                f"manifest describes {expected} elements but values has "
                f"{self.values.size}"
            )

    def tensor(self, name: str) -> np.ndarray:
        """View of one named tensor, shaped per the manifest."""
        offset = 0
        for entry_name, shape in self.manifest:
            count = int(np.prod(shape))
            if entry_name == name:
                return self.values[offset : offset + count].reshape(shape)
            offset += count
        raise KeyError(name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.manifest, self.spec_widths)


def init_params(spec: MLPSpec, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), spec.manifest())


def _check_input(spec: MLPSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ValueError(
            f"input has {x.shape[-1]} features, spec expects {spec.in_dim}"
        )
    if x.ndim > 2:
        raise ValueError("input must be a vector or a (batch, features) matrix")
    return x


def mlp_forward(spec: MLPSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single vector or a (batch, in) matrix."""
    x = _check_input(spec, x)
    widths = spec.widths_array()
    if x.ndim == 1:
        return kernels.forward(widths, params.values, x)
    return kernels.forward_batch(widths, params.values, x)


def mlp_vjp(
    spec: MLPSpec, params: ParamVector, x: np.ndarray, cotangent: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of <cotangent, mlp_forward(x)>.

    Returns (grad_input, grad_params). For batched input the cotangent is
    (batch, out), grad_input is per row, and grad_params sums over the batch.
    """
    x = _check_input(spec, x)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != x.shape[:-1] + (spec.out_dim,):
        raise ValueError(
            f"cotangent shape {cotangent.shape} does not match output shape "
            f"{x.shape[:-1] + (spec.out_dim,)}"
        )
    widths = spec.widths_array()
    if x.ndim == 1:
        return kernels.vjp(widths, params.values, x, cotangent)
    cache = kernels.forward_batch_cache(widths, params.values, x)
    return kernels.backward_from_cache(widths, params.values, cache, cotangent)


def grad_check(f, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    ``f`` maps a vector to (scalar value, gradient vector). The relative
    error denominator is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = eps
        hi, _ = f(x + step)
        lo, _ = f(x - step)
        numeric = (hi - lo) / (2.0 * eps)
        analytic = grad.flat[i]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
