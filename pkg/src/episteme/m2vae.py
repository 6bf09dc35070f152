"""Multi-modal VAE with one encoder per non-empty modality subset.

Every encoder emits ``[mean, log_var]`` of a diagonal Gaussian latent; every
decoder maps a latent back to one modality. Beliefs are fused by decoding the
previous embedding, overwriting the freshly observed slot, and re-encoding with
the all-modalities encoder.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import diffnet
from .diffnet import DivergenceError, MlpParams, MlpSpec, build_mlp

ObservationSet = Sequence[Optional[np.ndarray]]


@dataclass(frozen=True)
class VaeConfig:
    n_modalities: int = 2
    latent_dim: int = 2
    obs_dims: tuple[int, ...] = (2, 2)
    beta: float = 1.0
    # decoder likelihood std; squared error is scaled by 1 / (2 * recon_std**2)
    recon_std: float = 0.2
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "obs_dims", tuple(int(d) for d in self.obs_dims))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def validate(self):
        if not 1 <= self.n_modalities <= 3:
            raise ValueError("n_modalities must be between 1 and 3")
        if len(self.obs_dims) != self.n_modalities:
            raise ValueError(f"obs_dims has {len(self.obs_dims)} entries but n_modalities is {self.n_modalities}")
        if self.latent_dim < 1 or any(d < 1 for d in self.obs_dims):
            raise ValueError("latent and observation dimensions must be positive")
        if not 0 < self.beta < np.inf:
            raise ValueError("beta must be finite and positive")
        if not 0 < self.recon_std < np.inf:
            raise ValueError("recon_std must be finite and positive")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        if self.activation not in diffnet.ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(diffnet.ACTIVATIONS)}")
        if not 0 < self.lr < np.inf:
            raise ValueError("lr must be finite and positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")


@dataclass(frozen=True)
class LatentEmbedding:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std differ in shape")
        if np.any(self.std <= 0) or not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ValueError("embedding needs finite entries and strictly positive std")

    @classmethod
    def prior(cls, latent_dim: int) -> "LatentEmbedding":
        return cls(np.zeros(latent_dim), np.ones(latent_dim))


def subsets(n_modalities: int) -> list[tuple[int, ...]]:
    """Non-empty modality subsets, by size then lexicographically."""
    out = []
    for size in range(1, n_modalities + 1):
        out.extend(itertools.combinations(range(n_modalities), size))
    return out


def subset_key(subset) -> str:
    return "+".join(str(m) for m in sorted(subset))


def parse_subset_key(key: str) -> tuple[int, ...]:
    return tuple(sorted(int(p) for p in key.split("+")))


@dataclass
class M2vaeParams:
    config: VaeConfig
    encoders: dict[tuple[int, ...], MlpParams]
    decoders: list[MlpParams]

    def nets(self) -> list[MlpParams]:
        """All networks in canonical order: encoders by subset, then decoders."""
        return [self.encoders[s] for s in subsets(self.config.n_modalities)] + list(self.decoders)

    def with_nets(self, nets: Sequence[MlpParams]) -> "M2vaeParams":
        subs = subsets(self.config.n_modalities)
        return M2vaeParams(self.config, dict(zip(subs, nets[: len(subs)])), list(nets[len(subs):]))

    def copy(self) -> "M2vaeParams":
        return self.with_nets([n.copy() for n in self.nets()])

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["obs_dims"] = list(cfg["obs_dims"])
        cfg["hidden"] = list(cfg["hidden"])
        return {
            "config": cfg,
            "encoders": {subset_key(s): self.encoders[s].to_dict() for s in subsets(self.config.n_modalities)},
            "decoders": [d.to_dict() for d in self.decoders],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "M2vaeParams":
        config = VaeConfig(**doc["config"])
        config.validate()
        encoders = {parse_subset_key(k): MlpParams.from_dict(v) for k, v in doc["encoders"].items()}
        params = cls(config, encoders, [MlpParams.from_dict(d) for d in doc["decoders"]])
        _check_structure(params)
        return params


def _check_structure(params: M2vaeParams):
    cfg = params.config
    expected = set(subsets(cfg.n_modalities))
    if set(params.encoders) != expected:
        raise ValueError(f"checkpoint encoders {sorted(params.encoders)} != expected {sorted(expected)}")
    for s, enc in params.encoders.items():
        if enc.n_in != sum(cfg.obs_dims[m] for m in s) or enc.n_out != 2 * cfg.latent_dim:
            raise ValueError(f"encoder {subset_key(s)} has wrong input/output size")
    if len(params.decoders) != cfg.n_modalities:
        raise ValueError("decoder count does not match n_modalities")
    for m, dec in enumerate(params.decoders):
        if dec.n_in != cfg.latent_dim or dec.n_out != cfg.obs_dims[m]:
            raise ValueError(f"decoder {m} has wrong input/output size")


def init_m2vae(config: VaeConfig) -> M2vaeParams:
    config.validate()
    subs = subsets(config.n_modalities)
    seeds = np.random.SeedSequence(config.seed).generate_state(len(subs) + config.n_modalities)
    encoders = {}
    for i, s in enumerate(subs):
        n_in = sum(config.obs_dims[m] for m in s)
        spec = MlpSpec.make([n_in, *config.hidden, 2 * config.latent_dim], hidden=config.activation, seed=int(seeds[i]))
        encoders[s] = build_mlp(spec)
    decoders = []
    for m in range(config.n_modalities):
        spec = MlpSpec.make([config.latent_dim, *config.hidden, config.obs_dims[m]], hidden=config.activation,
                            seed=int(seeds[len(subs) + m]))
        decoders.append(build_mlp(spec))
    return M2vaeParams(config, encoders, decoders)


def save_checkpoint(params: M2vaeParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh)


def load_checkpoint(path) -> M2vaeParams:
    with open(path) as fh:
        return M2vaeParams.from_dict(json.load(fh))


def _present(params: M2vaeParams, obs: ObservationSet) -> tuple[int, ...]:
    if len(obs) != params.config.n_modalities:
        raise ValueError(f"observation set has {len(obs)} slots, expected {params.config.n_modalities}")
    present = tuple(m for m, o in enumerate(obs) if o is not None)
    if not present:
        raise ValueError("observation set is empty")
    for m in present:
        if np.shape(obs[m])[-1] != params.config.obs_dims[m]:
            raise ValueError(f"slot {m} has dimension {np.shape(obs[m])[-1]}, expected {params.config.obs_dims[m]}")
    return present


def _split(params: M2vaeParams, out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = params.config.latent_dim
    return out[..., :d], out[..., d:]


def encode_batch(params: M2vaeParams, subset, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode concatenated rows for one subset; returns ``(mean, std)``."""
    out = diffnet.predict(params.encoders[tuple(subset)], x)
    mean, log_var = _split(params, out)
    return mean, np.exp(0.5 * diffnet.clamp_log_var(log_var))


def encode_subset(params: M2vaeParams, obs: ObservationSet) -> LatentEmbedding:
    present = _present(params, obs)
    x = np.concatenate([np.asarray(obs[m], dtype=np.float64) for m in present])
    mean, std = encode_batch(params, present, x)
    return LatentEmbedding(mean, std)


def decode_all(params: M2vaeParams, z: LatentEmbedding) -> list[np.ndarray]:
    if z.mean.shape != (params.config.latent_dim,):
        raise ValueError(f"latent of shape {z.mean.shape}, expected ({params.config.latent_dim},)")
    return [diffnet.predict(dec, z.mean) for dec in params.decoders]


def fuse(params: M2vaeParams, prior: LatentEmbedding, new_obs: ObservationSet, visited_mask) -> LatentEmbedding:
    """Update a PoI belief with one fresh single-modality observation."""
    present = _present(params, new_obs)
    if len(present) != 1:
        raise ValueError(f"fusion takes exactly one observed modality, got {len(present)}")
    if not np.any(visited_mask):
        return encode_subset(params, new_obs)
    filled = decode_all(params, prior)
    m = present[0]
    filled[m] = np.asarray(new_obs[m], dtype=np.float64)
    return encode_subset(params, filled)


def _as_batch(params: M2vaeParams, batch) -> list[np.ndarray]:
    """Accept per-modality arrays or a list of complete observation sets."""
    M = params.config.n_modalities
    if len(batch) == M and all(isinstance(b, np.ndarray) and b.ndim == 2 for b in batch):
        arrays = [np.asarray(b, dtype=np.float64) for b in batch]
    else:
        for obs in batch:
            if len(obs) != M or any(o is None for o in obs):
                raise ValueError("training needs complete observation sets")
        arrays = [np.array([obs[m] for obs in batch], dtype=np.float64) for m in range(M)]
    if len({a.shape[0] for a in arrays}) != 1:
        raise ValueError("modalities disagree on batch size")
    for m, a in enumerate(arrays):
        if a.shape[1] != params.config.obs_dims[m]:
            raise ValueError(f"modality {m} has dimension {a.shape[1]}")
    return arrays


def _elbo(params: M2vaeParams, batch, noise, want_grads: bool):
    cfg = params.config
    xs = _as_batch(params, batch)
    n = xs[0].shape[0]
    subs = subsets(cfg.n_modalities)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (len(subs), n, cfg.latent_dim):
        raise ValueError(f"noise shape {noise.shape}, expected {(len(subs), n, cfg.latent_dim)}")
    scale = 1.0 / (2.0 * cfg.recon_std ** 2)
    total = 0.0
    terms = {}
    enc_grads = []
    dec_grads = [None] * cfg.n_modalities
    for si, s in enumerate(subs):
        enc = params.encoders[s]
        x_in = np.concatenate([xs[m] for m in s], axis=1)
        out, enc_cache = diffnet.forward(enc, x_in)
        mean, log_var = _split(params, out)
        z = diffnet.reparam_sample(mean, log_var, noise[si])
        kl, dkl_mean, dkl_lv = diffnet.kl_to_standard_normal(mean, log_var)
        if np.any(kl < 0):
            raise AssertionError("negative KL term")
        recon = np.zeros(n)
        dz = np.zeros_like(z)
        for m, dec in enumerate(params.decoders):
            x_hat, dec_cache = diffnet.forward(dec, z)
            err = x_hat - xs[m]
            recon += scale * np.sum(err * err, axis=1)
            if want_grads:
                g, dz_m = diffnet.backward(dec, dec_cache, (2.0 * scale / n) * err)
                dec_grads[m] = g if dec_grads[m] is None else diffnet.stack_grads([dec_grads[m], g])
                dz += dz_m
        terms[subset_key(s)] = (recon, kl)
        total += float(np.sum(recon + cfg.beta * kl)) / n
        if want_grads:
            d_mean, d_lv = diffnet.reparam_backward(log_var, noise[si], dz)
            d_mean = d_mean + cfg.beta * dkl_mean / n
            d_lv = d_lv + cfg.beta * dkl_lv / n
            g, _ = diffnet.backward(enc, enc_cache, np.concatenate([d_mean, d_lv], axis=1))
            enc_grads.append(g)
    if not np.isfinite(total):
        raise DivergenceError("non-finite ELBO loss")
    grads = params.with_nets(enc_grads + dec_grads) if want_grads else None
    return total, grads, terms


def elbo_and_grads(params: M2vaeParams, batch, noise) -> tuple[float, M2vaeParams]:
    """Negative ELBO summed over all subsets, averaged over the batch, with gradients.

    ``noise`` has shape ``(n_subsets, batch, latent_dim)`` in :func:`subsets` order.
    Reconstruction is a Gaussian log-likelihood with fixed std ``recon_std``,
    i.e. squared Euclidean error per modality over ``2 * recon_std**2``
    (constants dropped).
    """
    loss, grads, _ = _elbo(params, batch, noise, True)
    return loss, grads


def elbo_terms(params: M2vaeParams, batch, noise) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-sample ``(reconstruction, kl)`` arrays keyed by subset key."""
    return _elbo(params, batch, noise, False)[2]


def elbo_loss(params: M2vaeParams, batch, noise=None) -> float:
    """Loss without gradients; ``noise=None`` evaluates at the latent means."""
    xs = _as_batch(params, batch)
    if noise is None:
        noise = np.zeros((len(subsets(params.config.n_modalities)), xs[0].shape[0], params.config.latent_dim))
    return _elbo(params, xs, noise, False)[0]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_epoch(params: M2vaeParams, dataset: Sequence[np.ndarray], opt_state: diffnet.AdamState,
                batch_size: int, rng: np.random.Generator):
    """One shuffled pass of mini-batch Adam. Returns ``(params, opt_state, mean_loss)``."""
    n = dataset[0].shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    n_sub = len(subsets(params.config.n_modalities))
    losses = []
    for idx in _batches(n, batch_size, rng):
        noise = rng.standard_normal((n_sub, len(idx), params.config.latent_dim))
        loss, grads = elbo_and_grads(params, [d[idx] for d in dataset], noise)
        nets, opt_state = diffnet.adam_step(params.nets(), grads.nets(), opt_state)
        params = params.with_nets(nets)
        losses.append(loss)
    return params, opt_state, float(np.mean(losses))


def evaluate_epoch(params: M2vaeParams, dataset: Sequence[np.ndarray], batch_size: int,
                   rng: np.random.Generator) -> float:
    """Mean batch loss using the same shuffling and noise draws as :func:`train_epoch`."""
    n = dataset[0].shape[0]
    n_sub = len(subsets(params.config.n_modalities))
    losses = []
    for idx in _batches(n, batch_size, rng):
        noise = rng.standard_normal((n_sub, len(idx), params.config.latent_dim))
        losses.append(_elbo(params, [d[idx] for d in dataset], noise, False)[0])
    return float(np.mean(losses))


def pretrain(params: M2vaeParams, dataset: Sequence[np.ndarray], epochs: int | None = None,
             rng: np.random.Generator | None = None, on_epoch=None):
    """Run the full pre-training schedule; returns ``(params, per-epoch losses)``."""
    cfg = params.config
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    opt = diffnet.init_adam(params.nets(), lr=cfg.lr)
    history = []
    for epoch in range(epochs):
        params, opt, loss = train_epoch(params, dataset, opt, cfg.batch_size, rng)
        history.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, loss)
    return params, history
