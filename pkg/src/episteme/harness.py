"""Pipeline stages: dataset generation, VAE pre-training, agent training, evaluation."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import agent as dqn
from .config import ConfigError, RunConfig
from .data import generate_dataset, load_dataset, save_dataset
from .m2vae import M2vaeParams, init_m2vae, load_checkpoint, pretrain, save_checkpoint
from .perceived_env import PerceivedEnv, PolicyState, team_reward, trace_record

log = logging.getLogger(__name__)

POLICIES = ("learned", "random", "greedy_nearest")

# independent random streams derived from run.seed
STREAM_DATA, STREAM_VAE, STREAM_AGENT, STREAM_EPISODES, STREAM_ENV = range(5)


def derive_seed(run_seed: int, stream: int, extra: int = 0) -> int:
    return int(np.random.SeedSequence([run_seed, stream, extra]).generate_state(1)[0])


@dataclass
class MetricsRecord:
    episode: int
    total_requests: int
    team_return: float
    length: int
    mean_kl: float
    action_counts: dict[str, list[int]]
    epsilon: float
    wall_ms: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["wall_ms"] is None:
            del d["wall_ms"]
        return d


class MetricsSink:
    """Append-only JSON Lines writer, flushed per record."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w")
        self._last = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._fh.close()

    def write(self, record: MetricsRecord) -> None:
        if self._last is not None and record.episode <= self._last:
            raise ValueError("episode indices must increase")
        self._last = record.episode
        self._fh.write(json.dumps(record.to_dict()) + "\n")
        self._fh.flush()


def log_metrics(sink: MetricsSink, record: MetricsRecord) -> None:
    sink.write(record)


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        return [MetricsRecord(**json.loads(line)) for line in fh if line.strip()]


def metrics_path_for(checkpoint_path) -> Path:
    p = Path(checkpoint_path)
    return p.with_name(p.stem + ".metrics.jsonl")


# ---------------------------------------------------------------- stages


def run_gen_dataset(config: RunConfig, out_path, n: int | None = None) -> int:
    n = config.run.dataset_size if n is None else n
    rng = np.random.default_rng(derive_seed(config.run.seed, STREAM_DATA))
    ds = generate_dataset(n, config.world.sigma_obs, rng)
    save_dataset(ds, out_path)
    return len(ds)


def _vae_config(config: RunConfig):
    return replace(config.vae, seed=derive_seed(config.run.seed, STREAM_VAE, config.vae.seed))


def run_pretrain(config: RunConfig, data_path, out_path) -> tuple[Path, float]:
    ds = load_dataset(data_path)
    if len(ds.obs) != config.vae.n_modalities:
        raise ConfigError(f"dataset has {len(ds.obs)} modalities, vae.n_modalities={config.vae.n_modalities}")
    vcfg = _vae_config(config)
    params = init_m2vae(vcfg)
    out_path = Path(out_path)
    with open(metrics_path_for(out_path), "w") as fh:
        def on_epoch(epoch, loss):
            fh.write(json.dumps({"epoch": epoch + 1, "loss": loss}) + "\n")
            fh.flush()
        params, history = pretrain(params, ds.obs, rng=np.random.default_rng(vcfg.seed), on_epoch=on_epoch)
    save_checkpoint(params, out_path)
    return out_path, (history[-1] if history else float("nan"))


def check_vae_matches(config: RunConfig, vae: M2vaeParams) -> None:
    c, v = config.vae, vae.config
    if (c.n_modalities, c.latent_dim, tuple(c.obs_dims)) != (v.n_modalities, v.latent_dim, tuple(v.obs_dims)):
        raise ConfigError("VAE checkpoint structure does not match the vae section of the config")


def check_agent_matches(config: RunConfig, acfg: dqn.AgentConfig) -> None:
    a = config.agent
    if (a.input_dim, a.n_actions, a.n_heads) != (acfg.input_dim, acfg.n_actions, acfg.n_heads):
        raise ConfigError("agent checkpoint shape does not match the agent section of the config")


@dataclass
class EpisodeResult:
    team_return: float = 0.0
    rounds: int = 0
    requests: int = 0
    kl_values: list[float] = field(default_factory=list)
    action_counts: dict[str, list[int]] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    truncated: bool = False


def run_episode(env: PerceivedEnv, world_seed: int, choose, rng: np.random.Generator,
                on_request=None, on_round=None, request_limit: int | None = None) -> EpisodeResult:
    """Play one episode round-robin over robots 0..K-1.

    ``choose(policy_state, head, k)`` returns an action. ``on_round`` receives
    the round's ``(state, action, step_result, head)`` items and team reward.
    Reaching ``request_limit`` cuts the episode short after that request.
    """
    env.reset(world_seed)
    K = env.n_robots
    n_act = env.config.n_candidates + 1
    res = EpisodeResult(action_counts={str(m): [0] * n_act for m in range(env.n_modalities)})
    done = False
    while not done:
        items = []
        for k in range(K):
            ps = env.build_policy_state(k)
            head = env.modality(k)
            action = choose(ps, head, k)
            step = env.step(k, action, rng)
            items.append((ps, action, step, head))
            res.requests += 1
            res.action_counts[str(head)][action] += 1
            if step.info["poi"] is not None:
                res.kl_values.append(step.info["kl"])
            res.trace.append(trace_record(step))
            if on_request is not None:
                on_request()
            if step.done:
                done = True
                break
            if request_limit is not None and res.requests >= request_limit:
                res.truncated = done = True
                break
        rewards = [step.reward for _, _, step, _ in items] + [0.0] * (K - len(items))
        team = team_reward(rewards)
        res.team_return += team
        res.rounds += 1
        if on_round is not None:
            on_round(items, team)
    return res


def _record(episode, total, res: EpisodeResult, epsilon, t0, wall: bool) -> MetricsRecord:
    return MetricsRecord(
        episode=episode,
        total_requests=total,
        team_return=res.team_return,
        length=res.rounds,
        mean_kl=float(np.mean(res.kl_values)) if res.kl_values else 0.0,
        action_counts=res.action_counts,
        epsilon=epsilon,
        wall_ms=(time.perf_counter() - t0) * 1000.0 if wall else None,
    )


def _agent_config(config: RunConfig) -> dqn.AgentConfig:
    return replace(config.agent, seed=derive_seed(config.run.seed, STREAM_AGENT, config.agent.seed))


def train_agent(config: RunConfig, vae: M2vaeParams, sink: MetricsSink | None = None,
                max_requests: int | None = None, checkpoint_path=None):
    """Round-robin DQN training. Returns ``(agent_config, net, train_step, total_requests)``."""
    check_vae_matches(config, vae)
    acfg = _agent_config(config)
    budget = config.run.train_requests if max_requests is None else max_requests
    env = PerceivedEnv(config.world, vae, config.env)
    net = dqn.build_qnet(acfg)
    target = dqn.sync_target(net)
    opt = dqn.init_optimizer(net, acfg.lr)
    buffer = dqn.ReplayBuffer(acfg.buffer_capacity)
    schedule = dqn.EpsilonSchedule(acfg.eps_start, acfg.eps_end, acfg.eps_decay_steps)
    agent_rng = np.random.default_rng(acfg.seed)
    episode_rng = np.random.default_rng(derive_seed(config.run.seed, STREAM_EPISODES))
    env_rng = np.random.default_rng(derive_seed(config.run.seed, STREAM_ENV))
    st = {"requests": 0, "train_step": 0, "net": net, "target": target, "opt": opt}

    def choose(ps: PolicyState, head, k):
        return dqn.select_action(st["net"], ps, head, schedule(st["requests"]), agent_rng)

    def on_request():
        st["requests"] += 1
        if len(buffer) >= max(acfg.learning_starts, 1) and st["requests"] % acfg.train_every == 0:
            batch = buffer.sample(acfg.batch_size, agent_rng)
            st["net"], st["opt"], _ = dqn.train_batch(st["net"], st["target"], batch, acfg.gamma, st["opt"])
            st["train_step"] += 1
            if st["train_step"] % acfg.target_sync_every == 0:
                st["target"] = dqn.sync_target(st["net"])

    def on_round(items, team):
        for ps, action, step, head in items:
            buffer.push(dqn.Transition(ps, action, team, step.next_state, step.done, head))

    episode = 0
    while st["requests"] < budget:
        t0 = time.perf_counter()
        seed = int(episode_rng.integers(2**31))
        res = run_episode(env, seed, choose, env_rng, on_request, on_round, budget - st["requests"])
        if sink is not None:
            sink.write(_record(episode, st["requests"], res, schedule(st["requests"]), t0, config.run.log_wall_clock))
        episode += 1
        if checkpoint_path is not None and config.run.checkpoint_every and episode % config.run.checkpoint_every == 0:
            dqn.save_agent(checkpoint_path, acfg, st["net"], st["train_step"])
    log.info("trained %d episodes, %d requests, %d updates", episode, st["requests"], st["train_step"])
    return acfg, st["net"], st["train_step"], st["requests"]


def run_train(config: RunConfig, vae_path, out_path, max_requests: int | None = None) -> tuple[Path, Path]:
    vae = load_checkpoint(vae_path)
    out_path = Path(out_path)
    metrics = metrics_path_for(out_path)
    with MetricsSink(metrics) as sink:
        acfg, net, steps, _ = train_agent(config, vae, sink, max_requests, checkpoint_path=out_path)
    dqn.save_agent(out_path, acfg, net, steps)
    return out_path, metrics


def make_policy(name: str, net=None, rng: np.random.Generator | None = None):
    if name == "learned":
        if net is None:
            raise ValueError("learned policy needs a network")
        return lambda ps, head, k: dqn.select_action(net, ps, head, 0.0, rng)
    if name == "random":
        def random_policy(ps, head, k):
            choices = np.append(np.flatnonzero(ps.mask), ps.nop)
            return int(choices[rng.integers(len(choices))])
        return random_policy
    if name == "greedy_nearest":
        return lambda ps, head, k: 0 if ps.mask[0] else ps.nop
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")


def evaluate(config: RunConfig, vae: M2vaeParams, policy: str, episodes: int, net=None,
             sink: MetricsSink | None = None, traces: list | None = None) -> dict:
    """Epsilon-free rollouts on the fixed evaluation seed set; returns a summary."""
    check_vae_matches(config, vae)
    env = PerceivedEnv(config.world, vae, config.env)
    returns, lengths = [], []
    total = 0
    for e in range(episodes):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.run.eval_seed, e])
        choose = make_policy(policy, net, np.random.default_rng([config.run.eval_seed, e, 1]))
        res = run_episode(env, config.run.eval_seed + e, choose, rng)
        total += res.requests
        returns.append(res.team_return)
        lengths.append(res.rounds)
        if sink is not None:
            sink.write(_record(e, total, res, 0.0, t0, config.run.log_wall_clock))
        if traces is not None:
            traces.append(res.trace)
    return {
        "policy": policy,
        "episodes": episodes,
        "mean_return": float(np.mean(returns)),
        "std_return": float(np.std(returns)),
        "mean_length": float(np.mean(lengths)),
        "std_length": float(np.std(lengths)),
    }


def run_eval(config: RunConfig, vae_path, agent_path, policy: str, episodes: int | None = None,
             out_path=None, trace_path=None) -> dict:
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    episodes = config.run.eval_episodes if episodes is None else episodes
    vae = load_checkpoint(vae_path)
    net = None
    if policy == "learned":
        if agent_path is None:
            raise ConfigError("the learned policy needs --agent")
        acfg, net, _ = dqn.load_agent(agent_path)
        check_agent_matches(config, acfg)
    traces = [] if trace_path is not None else None
    if out_path is not None:
        with MetricsSink(out_path) as sink:
            summary = evaluate(config, vae, policy, episodes, net, sink, traces)
    else:
        summary = evaluate(config, vae, policy, episodes, net, None, traces)
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            for e, trace in enumerate(traces):
                for rec in trace:
                    fh.write(json.dumps({"episode": e, **rec}) + "\n")
    return summary
