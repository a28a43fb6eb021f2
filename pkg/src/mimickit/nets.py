"""Flat-parameter MLP kernels with exact reverse-mode gradients.

Networks are described by an :class:`MlpSpec` and live entirely in one flat
float64 vector with deterministic layout ``[W1, b1, W2, b2, ..., log_std?]``
(weights row-major, shape ``(out, in)``; the trailing ``log_std`` block exists
only for the gaussian head). Everything here is a pure function of
``(spec, params, input)``, so snapshots can be evaluated concurrently and
"updating" a network means building a new parameter vector.

All arithmetic is float64 so finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

HEADS = ("linear", "logistic", "gaussian")

# Guard against degenerate densities when a trained log-std runs away.
LOG_STD_FLOOR = -10.0

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a tanh MLP plus its output head.

    ``linear`` emits the last affine layer unchanged, ``logistic`` squashes it
    through a sigmoid, and ``gaussian`` reads the last affine layer as a
    per-dimension mean and appends a trainable state-independent log-std block
    to the parameter vector.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden dims must be >= 1")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}, expected one of {HEADS}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """Per-layer (out, in) shapes, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        n = sum(out * inp + out for out, inp in self.layer_dims)
        if self.head == "gaussian":
            n += self.output_dim
        return n


class GaussianAction(NamedTuple):
    """One sampled action with the distribution parameters that produced it."""

    mean: np.ndarray
    log_std: np.ndarray
    sample: np.ndarray


def split_params(spec: MlpSpec, params: np.ndarray):
    """Views of the flat vector as ([(W, b), ...], log_std_or_None).

    flatten(unflatten(p)) is the identity for every spec: the views cover the
    vector exactly once, in layout order.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise ValueError(f"params has shape {params.shape}, spec wants ({spec.param_count},)")
    layers = []
    i = 0
    for out, inp in spec.layer_dims:
        w = params[i:i + out * inp].reshape(out, inp)
        i += out * inp
        b = params[i:i + out]
        i += out
        layers.append((w, b))
    log_std = None
    if spec.head == "gaussian":
        log_std = params[i:i + spec.output_dim]
        i += spec.output_dim
    assert i == spec.param_count
    return layers, log_std


def flatten_params(spec: MlpSpec, layers, log_std=None) -> np.ndarray:
    """Inverse of :func:`split_params`."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    if spec.head == "gaussian":
        if log_std is None:
            raise ValueError("gaussian head needs a log_std block")
        parts.append(np.asarray(log_std, dtype=np.float64).ravel())
    flat = np.concatenate(parts)
    if flat.shape != (spec.param_count,):
        raise ValueError("flattened blocks do not match the spec layout")
    return flat


def logstd_slice(spec: MlpSpec) -> slice:
    """Location of the log-std block inside the flat vector."""
    if spec.head != "gaussian":
        raise ValueError("only gaussian-head specs carry a log_std block")
    return slice(spec.param_count - spec.output_dim, spec.param_count)


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Deterministic init: W ~ U(+-1/sqrt(fan_in)), biases zero.

    Gaussian-head log-std entries are drawn uniformly in [-1, 0], i.e. initial
    action noise sigma lies in [1/e, 1].
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count)
    layers, log_std = split_params(spec, params)
    for w, _b in layers:
        bound = 1.0 / math.sqrt(w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    if log_std is not None:
        log_std[...] = rng.uniform(-1.0, 0.0, size=log_std.shape)
    return params


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError("input must be a vector or a (batch, dim) matrix")


def _check_input(spec: MlpSpec, x2d: np.ndarray):
    if x2d.shape[1] != spec.input_dim:
        raise ValueError(f"input width {x2d.shape[1]} does not match spec input_dim {spec.input_dim}")


def _trunk_forward(spec: MlpSpec, layers, x2d: np.ndarray):
    """Hidden activations (tanh) plus the final pre-head affine output."""
    acts = [x2d]
    a = x2d
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        if i < last:
            a = np.tanh(z)
            acts.append(a)
    return acts, z


def forward(spec: MlpSpec, params: np.ndarray, x):
    """Evaluate the network.

    linear/logistic heads return the output array; the gaussian head returns
    ``(mean, log_std)``. Logistic outputs are strictly inside (0, 1) for any
    finite input.
    """
    x2d, single = _as_batch(x)
    _check_input(spec, x2d)
    layers, log_std = split_params(spec, params)
    _, z = _trunk_forward(spec, layers, x2d)
    if spec.head == "logistic":
        out = sigmoid(z)
    else:
        out = z
    if single:
        out = out[0]
    if spec.head == "gaussian":
        return out, log_std.copy()
    return out


def forward_cache(spec: MlpSpec, params: np.ndarray, x2d: np.ndarray):
    """Pre-head output plus the activation cache reused by backward/jvp.

    Valid only for the exact (params, x2d) pair it was computed from.
    """
    _check_input(spec, x2d)
    layers, _ = split_params(spec, params)
    acts, z = _trunk_forward(spec, layers, x2d)
    return z, (acts, z)


def backward(spec: MlpSpec, params: np.ndarray, x, out_grad, *,
             logstd_grad=None, at_logits: bool = False, cache=None):
    """Exact reverse-mode gradients of the forward map.

    ``out_grad`` is the loss gradient w.r.t. the head output (for the gaussian
    head: w.r.t. the mean). With ``at_logits=True`` a logistic head is
    differentiated w.r.t. its pre-sigmoid activation instead, which is the
    numerically stable route for cross-entropy losses. ``logstd_grad``
    (per-sample or per-dimension) lands directly in the log-std block.
    ``cache`` (from :func:`forward_cache`) skips the recomputation of the
    forward pass. Returns ``(param_grad, input_grad)``; contributions are
    summed over the batch.
    """
    x2d, single = _as_batch(x)
    _check_input(spec, x2d)
    g2d, _ = _as_batch(out_grad)
    if g2d.shape != (x2d.shape[0], spec.output_dim):
        raise ValueError(f"out_grad shape {g2d.shape} does not match ({x2d.shape[0]}, {spec.output_dim})")

    layers, _ = split_params(spec, params)
    acts, z = cache if cache is not None else _trunk_forward(spec, layers, x2d)

    if spec.head == "logistic" and not at_logits:
        s = sigmoid(z)
        delta = g2d * s * (1.0 - s)
    else:
        delta = g2d

    param_grad = np.zeros(spec.param_count)
    grad_layers, grad_log_std = split_params(spec, param_grad)
    for i in range(len(layers) - 1, -1, -1):
        w, _b = layers[i]
        gw, gb = grad_layers[i]
        gw += delta.T @ acts[i]
        gb += delta.sum(axis=0)
        delta = delta @ w
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    input_grad = delta

    if spec.head == "gaussian" and logstd_grad is not None:
        lg = np.asarray(logstd_grad, dtype=np.float64)
        if lg.ndim == 2:
            lg = lg.sum(axis=0)
        grad_log_std += lg

    if single:
        input_grad = input_grad[0]
    return param_grad, input_grad


def jvp(spec: MlpSpec, params: np.ndarray, x, tangent: np.ndarray, *, cache=None):
    """Directional derivative of the pre-head output w.r.t. the parameters.

    Forward-mode pass through the trunk: returns ``J(x) @ tangent`` where J is
    the Jacobian of the last affine layer (the mean, for gaussian heads). The
    gaussian head additionally returns the log-std block of ``tangent``.
    ``cache`` (from :func:`forward_cache`) supplies the primal activations so
    only the tangent has to be propagated.
    """
    x2d, single = _as_batch(x)
    _check_input(spec, x2d)
    tangent = np.asarray(tangent, dtype=np.float64)
    layers, _ = split_params(spec, params)
    dlayers, dlog_std = split_params(spec, tangent)
    acts = cache[0] if cache is not None else None

    a = x2d
    da = np.zeros_like(x2d)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        dw, db = dlayers[i]
        dz = da @ w.T + a @ dw.T + db
        if i < last:
            a = acts[i + 1] if acts is not None else np.tanh(a @ w.T + b)
            da = (1.0 - a ** 2) * dz
    dout = dz
    if single:
        dout = dout[0]
    if spec.head == "gaussian":
        return dout, dlog_std.copy()
    return dout


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch on sign so neither exp overflows; output is in the open (0, 1).
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Diagonal-Gaussian action head utilities
# ---------------------------------------------------------------------------

def gaussian_sample(mean, log_std, rng: np.random.Generator) -> np.ndarray:
    """Draw ``mean + exp(log_std) * eps`` with log_std floored at -10."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.exp(np.maximum(np.asarray(log_std, dtype=np.float64), LOG_STD_FLOOR))
    return mean + sigma * rng.standard_normal(mean.shape)


def gaussian_logprob(mean, log_std, action):
    """Log density of a diagonal Gaussian plus analytic gradients.

    logp = sum_i [-(a_i - mu_i)^2 / (2 sigma_i^2) - log sigma_i - log(2 pi)/2].
    Returns ``(logp, dlogp/dmean, dlogp/dlog_std)`` with per-sample rows when
    the inputs are batched.
    """
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.maximum(np.asarray(log_std, dtype=np.float64), LOG_STD_FLOOR)
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    quad = diff * diff * inv_var
    logp = -0.5 * quad.sum(axis=-1) - log_std.sum(axis=-1) - 0.5 * LOG_2PI * mean.shape[-1]
    dmean = diff * inv_var
    dlog_std = quad - 1.0
    return logp, dmean, dlog_std


def gaussian_kl(mean_a, log_std_a, mean_b, log_std_b):
    """Closed-form KL(a || b) for diagonal Gaussians, summed over dimensions."""
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    log_std_a = np.asarray(log_std_a, dtype=np.float64)
    log_std_b = np.asarray(log_std_b, dtype=np.float64)
    var_ratio = np.exp(2.0 * (log_std_a - log_std_b))
    diff = mean_b - mean_a
    per_dim = log_std_b - log_std_a + 0.5 * (var_ratio + diff * diff * np.exp(-2.0 * log_std_b)) - 0.5
    return per_dim.sum(axis=-1)


def gaussian_entropy(log_std) -> float:
    """Entropy of a diagonal Gaussian: sum_i (log sigma_i + (1 + log 2 pi)/2)."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(log_std.sum() + 0.5 * (1.0 + LOG_2PI) * log_std.size)
