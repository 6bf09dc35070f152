"""Perceived environment: the world seen through the VAE's beliefs.

Keeps one latent belief and one visit mask per PoI, turns robot actions into
drive-and-observe steps, and pays each robot the KL shift of the belief it
updated, less a per-cell movement cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffnet import kl_diag_gaussians
from .m2vae import LatentEmbedding, M2vaeParams, fuse
from .world import GridWorld, RobotPose, WorldConfig, reset_world

KL_DIRECTIONS = ("old_new", "new_old")


class InvalidActionError(ValueError):
    """The agent picked an action slot that is masked out."""


@dataclass(frozen=True)
class EnvConfig:
    n_candidates: int = 2
    kappa: float = 1.0
    move_penalty: float = 0.01
    t_max: int = 40
    kl_direction: str = "old_new"
    include_std_in_state: bool = False

    def validate(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be at least 1")
        if not 0 < self.kappa < np.inf:
            raise ValueError("kappa must be finite and positive")
        if not 0 <= self.move_penalty < np.inf:
            raise ValueError("move_penalty must be finite and non-negative")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ValueError(f"kl_direction must be one of {KL_DIRECTIONS}")

    def state_dim(self, latent_dim: int) -> int:
        per_slot = latent_dim * (2 if self.include_std_in_state else 1) + 1
        return self.n_candidates * per_slot


@dataclass
class BeliefState:
    Z: list[LatentEmbedding]
    V: np.ndarray  # (N, M) bool
    T: list[RobotPose]
    t: int = 0
    done: bool = False


@dataclass(frozen=True)
class PolicyState:
    vector: np.ndarray
    mask: np.ndarray  # bool, one entry per PoI slot

    @property
    def nop(self) -> int:
        return len(self.mask)


@dataclass
class StepResult:
    next_state: PolicyState
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def epistemic_reward(z_old: LatentEmbedding, z_new: LatentEmbedding, kappa: float = 1.0,
                     direction: str = "old_new") -> float:
    """``kappa * KL(z_old || z_new)``, or the reverse for ``direction="new_old"``."""
    if direction == "old_new":
        return kappa * kl_diag_gaussians(z_old.mean, z_old.std, z_new.mean, z_new.std)
    if direction == "new_old":
        return kappa * kl_diag_gaussians(z_new.mean, z_new.std, z_old.mean, z_old.std)
    raise ValueError(f"unknown KL direction {direction!r}")


def team_reward(per_robot_rewards) -> float:
    if len(per_robot_rewards) == 0:
        raise ValueError("team reward needs at least one robot reward")
    return float(np.mean(per_robot_rewards))


class PerceivedEnv:
    """Single-episode environment; call :meth:`reset` before stepping."""

    def __init__(self, world_config: WorldConfig, vae: M2vaeParams, config: EnvConfig = EnvConfig()):
        world_config.validate()
        config.validate()
        if vae.config.n_modalities <= max(world_config.robot_modalities):
            raise ValueError("VAE checkpoint has fewer modalities than the robots use")
        self.world_config = world_config
        self.vae = vae
        self.config = config
        self.world: GridWorld | None = None
        self.state: BeliefState | None = None
        self._team_modalities = sorted(set(world_config.robot_modalities))

    @property
    def n_robots(self) -> int:
        return self.world_config.n_robots

    @property
    def n_modalities(self) -> int:
        return self.vae.config.n_modalities

    @property
    def state_dim(self) -> int:
        return self.config.state_dim(self.vae.config.latent_dim)

    @property
    def max_requests(self) -> int:
        return self.config.t_max * self.n_robots

    def modality(self, robot_k: int) -> int:
        return self.world.robots[robot_k].modality

    def reset(self, seed: int | None = None) -> tuple[BeliefState, list[PolicyState]]:
        self.world = reset_world(self.world_config, seed)
        d_z = self.vae.config.latent_dim
        n = self.world.n_pois
        self.state = BeliefState(
            Z=[LatentEmbedding.prior(d_z) for _ in range(n)],
            V=np.zeros((n, self.n_modalities), dtype=bool),
            T=self.world.robots,
        )
        return self.state, [self.build_policy_state(k) for k in range(self.n_robots)]

    def candidates(self, robot_k: int) -> list[int]:
        return self.world.candidate_pois(robot_k, self.state.V, self.config.n_candidates)

    def build_policy_state(self, robot_k: int) -> PolicyState:
        """Candidate means, optionally stds, then normalized distances; zero-padded."""
        cfg = self.config
        I = cfg.n_candidates
        d_z = self.vae.config.latent_dim
        cands = self.candidates(robot_k)
        means = np.zeros((I, d_z))
        stds = np.zeros((I, d_z))
        dists = np.zeros(I)
        mask = np.zeros(I, dtype=bool)
        scale = 1.0 / (self.world_config.width + self.world_config.height)
        for slot, n in enumerate(cands):
            means[slot] = self.state.Z[n].mean
            stds[slot] = self.state.Z[n].std
            dists[slot] = self.world.path_distance(robot_k, n) * scale
            mask[slot] = True
        parts = [means.ravel()]
        if cfg.include_std_in_state:
            parts.append(stds.ravel())
        parts.append(dists)
        return PolicyState(np.concatenate(parts), mask)

    def _all_visited(self) -> bool:
        return bool(np.all(self.state.V[:, self._team_modalities]))

    def step(self, robot_k: int, action: int, rng: np.random.Generator) -> StepResult:
        """Apply one agent request for robot ``k``."""
        st = self.state
        if st is None:
            raise RuntimeError("reset() must be called before step()")
        if st.done:
            raise RuntimeError("episode is finished")
        cfg = self.config
        I = cfg.n_candidates
        cands = self.candidates(robot_k)
        m = self.modality(robot_k)
        info = {"k": robot_k, "modality": m, "action": int(action), "poi": None, "kl": 0.0, "distance": 0}
        if not 0 <= action <= I:
            raise InvalidActionError(f"action {action} outside [0, {I}]")
        if action == I:
            for n in cands:
                st.V[n, m] = True
            reward = 0.0
        else:
            if action >= len(cands):
                raise InvalidActionError(f"slot {action} is masked for robot {robot_k}")
            n = cands[action]
            obs, distance = self.world.execute_drive(robot_k, n, rng)
            slots = [None] * self.n_modalities
            slots[m] = obs.vector
            z_old = st.Z[n]
            z_new = fuse(self.vae, z_old, slots, st.V[n])
            kl = epistemic_reward(z_old, z_new, 1.0, cfg.kl_direction)
            reward = cfg.kappa * kl - cfg.move_penalty * distance
            st.Z[n] = z_new
            st.V[n, m] = True
            info.update(poi=n, kl=kl, distance=distance)
        st.t += 1
        st.done = self._all_visited() or st.t >= self.max_requests
        info["t"] = st.t
        return StepResult(self.build_policy_state(robot_k), float(reward), st.done, info)


def trace_record(result: StepResult) -> dict:
    """One JSON-serializable episode-trace entry."""
    info = result.info
    return {
        "t": info["t"],
        "k": info["k"],
        "modality": info["modality"],
        "action": info["action"],
        "poi": info["poi"],
        "r_k": result.reward,
        "kl": info["kl"],
        "distance": info["distance"],
        "done": result.done,
    }


def write_trace(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
