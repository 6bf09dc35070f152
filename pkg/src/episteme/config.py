"""Run configuration: strict JSON with defaults and cross-field validation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig
from .m2vae import VaeConfig
from .perceived_env import EnvConfig
from .world import N_MODALITIES, OBS_DIM, WorldConfig

SEED_ENV_VAR = "EPISTEME_SEED"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    dataset_size: int = 600
    train_requests: int = 50_000
    eval_episodes: int = 100
    eval_seed: int = 100_000
    output_dir: str = "runs"
    vae_checkpoint: str | None = None
    agent_checkpoint: str | None = None
    checkpoint_every: int = 0
    log_wall_clock: bool = False

    def validate(self):
        if self.dataset_size < 1 or self.train_requests < 0 or self.eval_episodes < 1:
            raise ValueError("dataset_size and eval_episodes must be positive, train_requests non-negative")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")
        if self.seed < 0 or self.eval_seed < 0:
            raise ValueError("seed and eval_seed must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            try:
                getattr(self, name).validate()
            except ValueError as exc:
                raise ConfigError(f"[{name}] {exc}") from exc
        w, v, e, a = self.world, self.vae, self.env, self.agent
        if v.n_modalities != N_MODALITIES:
            raise ConfigError(f"vae.n_modalities={v.n_modalities} but the world observation table has {N_MODALITIES}")
        if max(w.robot_modalities) >= v.n_modalities:
            raise ConfigError(f"world.robot_modalities uses modality {max(w.robot_modalities)} "
                              f"but vae.n_modalities={v.n_modalities}")
        if any(d != OBS_DIM for d in v.obs_dims):
            raise ConfigError(f"vae.obs_dims={list(v.obs_dims)} must all equal the world observation size {OBS_DIM}")
        expected = e.state_dim(v.latent_dim)
        if a.input_dim != expected:
            raise ConfigError(
                f"agent.input_dim={a.input_dim} does not match env.n_candidates={e.n_candidates} and "
                f"vae.latent_dim={v.latent_dim} (include_std_in_state={e.include_std_in_state}): expected {expected}"
            )
        if a.n_actions != e.n_candidates + 1:
            raise ConfigError(f"agent.n_actions={a.n_actions} must equal env.n_candidates+1={e.n_candidates + 1}")
        if a.n_heads != v.n_modalities:
            raise ConfigError(f"agent.n_heads={a.n_heads} must equal vae.n_modalities={v.n_modalities}")
        return self

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


SECTIONS = {"world": WorldConfig, "vae": VaeConfig, "env": EnvConfig, "agent": AgentConfig, "run": RunSection}


def _check_type(where: str, default, value) -> None:
    """JSON values must have the default's type; ints pass for floats, null only where the default is null."""
    if default is None:
        ok = value is None or isinstance(value, str)
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: unexpected value {value!r} (expected {type(default).__name__})")


def _build_section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        _check_type(f"{name}.{key}", getattr(defaults, key), value)
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    sections = {name: _build_section(name, cls, doc.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = RunConfig(**sections)
    seed = os.environ.get(SEED_ENV_VAR)
    if seed is not None and seed.strip():
        try:
            cfg = cfg.replace(run=dataclasses.replace(cfg.run, seed=int(seed)))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR}={seed!r} is not an integer") from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    """Parse a JSON config file; an empty file gives the full defaults."""
    text = Path(path).read_text()
    if not text.strip():
        return config_from_dict({})
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
