"""Small reverse-mode MLP engine: init, forward/backward, Adam, Gaussian helpers.

Tensors are plain ``float64`` numpy arrays. Weights are stored ``(n_out, n_in)``
and layers compute ``y = act(x @ W.T + b)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

ACTIVATIONS = {"identity": 0, "tanh": 1, "relu": 2}
LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


class DivergenceError(ArithmeticError):
    """Raised when training produces non-finite numbers."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise ValueError(f"an MLP needs at least 2 layer sizes, got {list(sizes)}")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {list(sizes)}")
        if len(acts) != len(sizes) - 1:
            raise ValueError(
                f"expected {len(sizes) - 1} activations for {len(sizes)} layer sizes, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def make(cls, sizes, hidden="tanh", output="identity", seed=0):
        """Spec with one activation for hidden layers and one for the output."""
        sizes = tuple(sizes)
        n = max(len(sizes) - 1, 0)
        acts = tuple([hidden] * (n - 1) + [output]) if n else ()
        return cls(sizes, acts, seed)

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(ACTIVATIONS[a] for a in self.activations)

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), int(d.get("seed", 0)))


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, spec, arrays):
        return cls(spec, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(self.spec, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    @property
    def n_in(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.spec.layer_sizes[-1]

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d):
        spec = MlpSpec.from_dict(d["spec"])
        weights = [np.array(layer["w"], dtype=np.float64).reshape(o, i)
                   for layer, i, o in zip(d["layers"], spec.layer_sizes[:-1], spec.layer_sizes[1:])]
        biases = [np.array(layer["b"], dtype=np.float64) for layer in d["layers"]]
        params = cls(spec, weights, biases)
        _check_shapes(params)
        return params


def _check_shapes(params: MlpParams):
    sizes = params.spec.layer_sizes
    if len(params.weights) != len(sizes) - 1 or len(params.biases) != len(sizes) - 1:
        raise ValueError("parameter layer count does not match spec")
    for w, b, n_in, n_out in zip(params.weights, params.biases, sizes[:-1], sizes[1:]):
        if w.shape != (n_out, n_in) or b.shape != (n_out,):
            raise ValueError(f"layer shapes {w.shape}/{b.shape} do not match ({n_out}, {n_in})")


def build_mlp(spec: MlpSpec) -> MlpParams:
    """Glorot-uniform weights, zero biases, drawn from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(spec, weights, biases)


def save_mlp(params: MlpParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh)


def load_mlp(path) -> MlpParams:
    with open(path) as fh:
        return MlpParams.from_dict(json.load(fh))


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_in:
        raise ValueError(f"input shape {x.shape} does not match network input size {params.n_in}")
    return np.ascontiguousarray(x), single


def forward(params: MlpParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass. Returns the output and the activation cache for :func:`backward`."""
    xb, single = _as_batch(params, x)
    acts = kernels.mlp_forward(xb, params.weights, params.biases, params.spec.codes)
    out = acts[-1]
    return (out[0] if single else out), acts


def predict(params: MlpParams, x) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: MlpParams, cache, grad_out) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
    g = np.asarray(grad_out, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if g.shape != cache[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} does not match output {cache[-1].shape}")
    dws, dbs, dx = kernels.mlp_backward(cache, params.weights, params.spec.codes, g)
    return MlpParams(params.spec, dws, dbs), (dx[0] if single else dx)


def forward_backward(params: MlpParams, x, loss_grad_at_output):
    out, cache = forward(params, x)
    grads, dx = backward(params, cache, loss_grad_at_output)
    return out, grads, dx


def grad_check(params: MlpParams, x, tolerance: float = 1e-4, h: float = 1e-4,
               grads: MlpParams | None = None, floor: float = 1e-2) -> tuple[bool, float]:
    """Compare analytic gradients of ``0.5 * ||f(x)||^2`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps near-zero partials from amplifying finite-difference noise. Pass
    ``grads`` to check an externally supplied gradient instead.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    xb, _ = _as_batch(params, x)
    if grads is None:
        out, cache = forward(params, xb)
        grads, _ = backward(params, cache, out)

    def loss(p):
        y = forward(p, xb)[0]
        return 0.5 * float(np.sum(y * y))

    probe = params.copy()
    worst = 0.0
    for arr, garr in zip(probe.arrays(), grads.arrays()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(probe)
            flat[i] = orig - h
            down = loss(probe)
            flat[i] = orig
            num = (up - down) / (2 * h)
            ana = gflat[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst < tolerance, worst


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # per-array update counts, for bias correction when arrays are skipped
    counts: list[int] = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
                         self.lr, self.beta1, self.beta2, self.eps, list(self.counts))


def _flatten(params) -> tuple[list[np.ndarray], bool]:
    if isinstance(params, MlpParams):
        return params.arrays(), True
    out = []
    for p in params:
        out.extend(p.arrays())
    return out, False


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """Zero moments shaped like ``params`` (an ``MlpParams`` or a sequence of them)."""
    arrays, _ = _flatten(params)
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                     0, lr, beta1, beta2, eps, [0] * len(arrays))


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    ``params`` is an ``MlpParams`` or a sequence of them. For a sequence,
    ``grads`` may hold ``None`` for networks to leave untouched: their
    parameters and moments are not updated.
    """
    single = isinstance(params, MlpParams)
    nets = [params] if single else list(params)
    gnets = [grads] if single else list(grads)
    if len(nets) != len(gnets):
        raise ValueError("params and grads differ in length")
    new_state = state.copy()
    new_state.step += 1
    b1, b2 = state.beta1, state.beta2
    out_nets = []
    idx = 0
    for net, gnet in zip(nets, gnets):
        arrays = net.arrays()
        if gnet is None:
            out_nets.append(net.copy())
            idx += len(arrays)
            continue
        new_arrays = []
        for arr, g in zip(arrays, gnet.arrays()):
            if g.shape != arr.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {arr.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient in Adam update")
            m = b1 * state.m[idx] + (1 - b1) * g
            v = b2 * state.v[idx] + (1 - b2) * g * g
            t = state.counts[idx] + 1
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            new_arrays.append(arr - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
            new_state.m[idx], new_state.v[idx], new_state.counts[idx] = m, v, t
            idx += 1
        out_nets.append(MlpParams.from_arrays(net.spec, new_arrays))
    if idx != len(state.m):
        raise ValueError("optimizer state does not match parameter structure")
    return (out_nets[0] if single else out_nets), new_state


def clamp_log_var(log_var):
    return np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)


def reparam_sample(mean, log_var, noise) -> np.ndarray:
    """``mean + exp(0.5 * log_var) * noise`` with log-variance clamped to [-10, 10]."""
    mean, log_var, noise = (np.asarray(a, dtype=np.float64) for a in (mean, log_var, noise))
    if not (mean.shape == log_var.shape == noise.shape):
        raise ValueError(f"shape mismatch: {mean.shape}, {log_var.shape}, {noise.shape}")
    return mean + np.exp(0.5 * clamp_log_var(log_var)) * noise


def reparam_backward(log_var, noise, grad_out) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(grad_out * reparam_sample(...))`` w.r.t. mean and log-variance."""
    log_var = np.asarray(log_var, dtype=np.float64)
    inside = (log_var >= LOG_VAR_MIN) & (log_var <= LOG_VAR_MAX)
    std = np.exp(0.5 * clamp_log_var(log_var))
    return np.array(grad_out, dtype=np.float64), grad_out * 0.5 * std * noise * inside


def kl_diag_gaussians(q_mean, q_std, p_mean, p_std) -> float:
    """KL( N(q_mean, q_std^2) || N(p_mean, p_std^2) ) for diagonal Gaussians."""
    q_mean, q_std, p_mean, p_std = (np.asarray(a, dtype=np.float64) for a in (q_mean, q_std, p_mean, p_std))
    if not (q_mean.shape == q_std.shape == p_mean.shape == p_std.shape):
        raise ValueError("KL arguments must share a shape")
    if np.any(q_std <= 0) or np.any(p_std <= 0):
        raise ValueError("standard deviations must be strictly positive")
    terms = (np.log(p_std / q_std)
             + (q_std ** 2 + (q_mean - p_mean) ** 2) / (2.0 * p_std ** 2) - 0.5)
    # exact zero for identical arguments; guard tiny negative rounding
    return max(float(np.sum(terms)), 0.0)


def kl_to_standard_normal(mean, log_var):
    """Row-wise KL(N(mean, exp(log_var)) || N(0, I)) and its gradients.

    Returns ``(kl, d_mean, d_log_var)`` where ``kl`` has one entry per row.
    Log-variance is clamped; the gradient through the clamp is zero.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    lv = clamp_log_var(log_var)
    var = np.exp(lv)
    kl = 0.5 * np.sum(var + mean * mean - 1.0 - lv, axis=-1)
    inside = (log_var >= LOG_VAR_MIN) & (log_var <= LOG_VAR_MAX)
    return kl, mean.copy(), 0.5 * (var - 1.0) * inside


def check_finite(value, what="value"):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {what}")
    return value


def stack_grads(grads: Sequence[MlpParams]) -> MlpParams:
    """Elementwise sum of same-spec gradient sets."""
    first = grads[0]
    arrays = [a.copy() for a in first.arrays()]
    for g in grads[1:]:
        for acc, a in zip(arrays, g.arrays()):
            acc += a
    return MlpParams.from_arrays(first.spec, arrays)
