"""Cycling-task experiments: train, identify, mask, store, evaluate, record.

Each segment of the cycling sequence is trained with SAC (plus whatever the
method adds), then skill neurons are identified, masks merged and part of the
segment's experience moved to the prior buffer. After every segment the agent
is evaluated on all segments seen so far, filling one row of the sr matrix.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from nbsp import envs
from nbsp.config import ExperimentConfig
from nbsp.errors import NumericError
from nbsp.mechanism import (GradientMask, NbspState, PriorBuffer, build_mask, merge_masks,
                            nbsp_gradient_step, store_prior)
from nbsp.metrics import MetricSummary, SrMatrix, mean_std
from nbsp.sac import ReplayBuffer, SacAgent
from nbsp.skill_neurons import identify, random_skill_neurons

log = logging.getLogger(__name__)

ALL_NETWORKS = ("actor", "critic1", "critic2")

# identification kind, masked networks, prior replay
METHODS = {
    "nbsp": ("goal", ALL_NETWORKS, True),
    "base": (None, (), False),
    "mask_only": ("goal", ALL_NETWORKS, False),
    "replay_only": (None, (), True),
    "random_selection": ("random", ALL_NETWORKS, True),
    "actor_only": ("goal", ("actor",), True),
    "critic_only": ("goal", ("critic1", "critic2"), True),
}

EVAL_SEED0 = 10_000_000


@dataclass
class SegmentResult:
    index: int
    task: str
    status: str = "ok"
    env_steps: int = 0
    grad_steps: int = 0
    early_stopped: bool = False
    pre_eval: float = math.nan
    curve: list = field(default_factory=list)  # (env_step, eval_value)


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    seed: int
    sr: SrMatrix
    segments: list[SegmentResult]
    masks: list = field(default_factory=list)  # (segment, GradientMask | None, scores | None)
    metrics: dict = field(default_factory=dict)
    run_dir: Path | None = None

    @property
    def complete(self) -> bool:
        return all(s.status == "ok" for s in self.segments) and len(self.segments) == self.sr.k

    @property
    def curves(self):
        for seg in self.segments:
            for step, value in seg.curve:
                yield seg.index, step, value


def make_agent(config: ExperimentConfig, seed: int) -> SacAgent:
    task = config.task_specs[0]
    return SacAgent(task.obs_dim, task.action_dim, task.discrete, config.sac, seed=seed)


def evaluate(agent, task: envs.TaskSpec, episodes: int = 20, seed: int = EVAL_SEED0) -> float:
    """Mean goal proximity over deterministic-policy episodes.

    ``agent`` may be a :class:`SacAgent` or a ``policy(obs, state)`` callable.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    if isinstance(agent, SacAgent):
        def policy(obs, state):
            return agent.sample_action(obs, "deterministic")[0]
    else:
        policy = agent
    norm = envs.return_norm(task) if task.gpm_kind == "normalized_return" else None
    total = 0.0
    for e in range(episodes):
        ep = envs.rollout(task, policy, seed + e, keep_transitions=False)
        total += envs.gpm(ep, task, norm)
    return total / episodes


class _UpdateLog:
    def __init__(self, path: Path | None, interval: int):
        self.interval = interval
        self.fh = None
        if path is not None:
            self.fh = open(path, "w", newline="")
            self.writer = csv.writer(self.fh)
            self.writer.writerow(["segment", "grad_step", "source", "q_loss", "pi_loss", "alpha", "entropy"])

    def write(self, segment: int, step: int, stats: dict) -> None:
        if self.fh is not None and step % self.interval == 0:
            self.writer.writerow([segment, step, stats["source"], repr(stats["q_loss"]), repr(stats["pi_loss"]),
                                  repr(stats["alpha"]), repr(stats["entropy"])])

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def train_segment(agent: SacAgent, state: NbspState, task: envs.TaskSpec, config: ExperimentConfig,
                  buffer: ReplayBuffer, rngs: dict, segment: int = 1, warmup_steps: int | None = None,
                  update_log: _UpdateLog | None = None) -> SegmentResult:
    """Train on one task until the budget runs out or evaluation is stably high."""
    e = config.experiment
    result = SegmentResult(segment, task.name)
    budget = config.budget
    warmup = e.init_steps if warmup_steps is None else warmup_steps
    binary = task.gpm_kind == "binary_success"
    result.pre_eval = evaluate(agent, task, e.eval_episodes)
    result.curve.append((0, result.pre_eval))
    evals: list[float] = []
    ep_counter = 0
    env_state = envs.reset(task, rngs["episode_base"] + ep_counter)
    obs = envs.observe(task, env_state)
    try:
        while result.env_steps < budget:
            if result.env_steps < warmup:
                action = agent.random_action(rngs["action"])
            else:
                action, _ = agent.sample_action(obs, "stochastic", rngs["action"])
            env_state, reward, done = envs.step(task, env_state, action)
            nxt = envs.observe(task, env_state)
            buffer.push(obs, action, nxt, reward, env_state.success)
            obs = nxt
            result.env_steps += 1
            if done:
                ep_counter += 1
                env_state = envs.reset(task, rngs["episode_base"] + ep_counter)
                obs = envs.observe(task, env_state)
            if result.env_steps > warmup and len(buffer) >= agent.config.batch_size:
                for _ in range(e.replay_ratio):
                    stats = nbsp_gradient_step(agent, state, buffer, rngs["batch"])
                    result.grad_steps += 1
                    if update_log is not None:
                        update_log.write(segment, state.grad_step, stats)
            if result.env_steps % e.eval_interval == 0:
                value = evaluate(agent, task, e.eval_episodes)
                evals.append(value)
                result.curve.append((result.env_steps, value))
                if (binary and len(evals) >= e.early_stop_window
                        and np.mean(evals[-e.early_stop_window:]) >= e.early_stop_threshold):
                    result.early_stopped = True
                    break
    except NumericError as exc:
        log.warning("segment %d (%s) diverged: %s", segment, task.name, exc)
        result.status = "failed"
    if result.status == "ok" and not agent.all_finite():
        result.status = "failed"
    return result


def _seed_streams(seed: int) -> dict:
    ss = np.random.SeedSequence(seed)
    agent_seed, action, batch, ident, store, select = ss.spawn(6)
    return {
        "agent_seed": int(agent_seed.generate_state(1)[0]),
        "action": np.random.default_rng(action),
        "batch": np.random.default_rng(batch),
        "identify": np.random.default_rng(ident),
        "store": np.random.default_rng(store),
        "select": np.random.default_rng(select),
    }


def _network_shapes(agent: SacAgent) -> dict[str, list[int]]:
    return {name: net.layer_sizes for name, net in agent.networks.items()}


def run_cycling_experiment(config: ExperimentConfig, seed: int, out_dir=None) -> RunArtifacts:
    """Run every segment of the cycling sequence for one seed."""
    config.validate()
    e, nb, idc = config.experiment, config.nbsp, config.identify
    identify_kind, masked_nets, replay = METHODS[e.method]
    rngs = _seed_streams(seed)
    agent = make_agent(config, rngs["agent_seed"])
    first = config.task_specs[0]
    prior = PriorBuffer(config.prior_capacity, first.obs_dim, first.action_dim, first.discrete)
    state = NbspState(None, prior, nb.replay_interval, nb.alpha_mask, replay=replay)
    full_mask: GradientMask | None = None
    segment_names = config.segments
    sr = SrMatrix(len(segment_names))
    run_dir = Path(out_dir) if out_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.snapshot").write_text(config.to_toml())
    update_log = _UpdateLog(run_dir / "updates.csv" if run_dir else None, e.log_interval)
    artifacts = RunArtifacts(config, seed, sr, [], run_dir=run_dir)
    buffer = None
    try:
        for i, name in enumerate(segment_names):
            task = envs.make_task(name, seed=seed)
            if buffer is None or not e.persistent_buffer:
                buffer = ReplayBuffer(e.buffer_size, task.obs_dim, task.action_dim, task.discrete)
            if e.reset_optimizers:
                agent.reset_optimizers()
            if e.reset_temperature and i > 0:
                agent.reset_temperature()
            warmup = e.init_steps if (e.warmup == "per_task" or i == 0) else 0
            rngs["episode_base"] = (seed * 1000 + i) * 100_000
            result = train_segment(agent, state, task, config, buffer, rngs, i + 1, warmup, update_log)
            artifacts.segments.append(result)
            if result.status != "ok":
                break

            scores = None
            if identify_kind is not None:
                skill_set, scores = identify(agent, task, idc.steps, rngs["identify"], nb.proportion,
                                             mode=idc.mode, scope=idc.scope, second_pass=idc.second_pass,
                                             episode_seed0=(seed * 1000 + i) * 100_000 + 50_000)
                if identify_kind == "random":
                    skill_set = random_skill_neurons(scores, nb.proportion, rngs["select"], idc.scope, task.name)
                state.skill_sets.append(skill_set)
                incoming = build_mask(skill_set, nb.alpha_mask, _network_shapes(agent))
                full_mask = incoming if full_mask is None else merge_masks(full_mask, incoming, nb.merge_rule)
                state.mask = full_mask.restricted(masked_nets)
            artifacts.masks.append((i + 1, state.mask, scores))
            if replay:
                store_prior(buffer, state.prior, nb.store_size, rngs["store"], f"segment-{i + 1}:{name}")

            for j in range(i + 1):
                past = envs.make_task(segment_names[j], seed=seed)
                sr.set(i, j, evaluate(agent, past, e.eval_episodes))
            if run_dir is not None:
                _write_segment_files(run_dir, artifacts, i + 1, state, scores, agent)
    finally:
        update_log.close()

    if sr.is_complete():
        s = MetricSummary.of(sr)
        artifacts.metrics = {"asr": s.asr, "fm": s.fm, "fwt": s.fwt, "per_segment_diagonal": s.per_segment_diagonal}
        if first.gpm_kind == "normalized_return":
            artifacts.metrics["ar"] = s.asr
    artifacts.metrics["seed"] = seed
    artifacts.metrics["complete"] = artifacts.complete
    artifacts.metrics["prior_steps"] = state.prior_steps
    artifacts.metrics["grad_steps"] = state.grad_step
    if run_dir is not None:
        write_run_files(run_dir, artifacts)
    return artifacts


def _write_segment_files(run_dir: Path, artifacts: RunArtifacts, segment: int, state: NbspState, scores,
                         agent: SacAgent) -> None:
    if state.mask is not None:
        (run_dir / "masks").mkdir(exist_ok=True)
        with open(run_dir / "masks" / f"segment_{segment}.tsv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t")
            w.writerow(["network", "layer", "index", "score", "mask"])
            for net, layer, index, m in state.mask.rows():
                s = "" if scores is None else scores.get((net, layer, index), "")
                w.writerow([net, layer, index, "" if s == "" else repr(float(s)), repr(m)])
    if state.replay:
        (run_dir / "prior").mkdir(exist_ok=True)
        summary = {"segment": segment, "size": len(state.prior), "capacity": state.prior.capacity,
                   "composition": state.prior.composition()}
        (run_dir / "prior" / f"segment_{segment}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if artifacts.config.experiment.checkpoints:
        (run_dir / "checkpoints").mkdir(exist_ok=True)
        agent.save(run_dir / "checkpoints" / f"segment_{segment}.npz")


def write_sr_csv(path, sr: SrMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "value"])
        for i, j, v in sr.rows():
            w.writerow([i, j, repr(v)])


def read_sr_csv(path) -> SrMatrix:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"i", "j", "value"}:
            raise ValueError(f"{path}: expected columns i, j, value")
        rows = [(int(r["i"]), int(r["j"]), float(r["value"])) for r in reader]
    return SrMatrix.from_rows(rows)


def write_run_files(run_dir: Path, artifacts: RunArtifacts) -> None:
    run_dir = Path(run_dir)
    write_sr_csv(run_dir / "sr_matrix.csv", artifacts.sr)
    with open(run_dir / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "env_step", "eval_value"])
        for seg, step, value in artifacts.curves:
            w.writerow([seg, step, repr(float(value))])
    (run_dir / "metrics.json").write_text(json.dumps(artifacts.metrics, indent=2, sort_keys=True))
    status = {
        "seed": artifacts.seed,
        "config_hash": artifacts.config.hash(),
        "complete": artifacts.complete,
        "segments": [{"index": s.index, "task": s.task, "status": s.status, "env_steps": s.env_steps,
                      "grad_steps": s.grad_steps, "early_stopped": s.early_stopped, "pre_eval": s.pre_eval}
                     for s in artifacts.segments],
    }
    (run_dir / "status.json").write_text(json.dumps(status, indent=2, sort_keys=True))


def proportion_sweep(config: ExperimentConfig, proportions, seeds=None, out_root=None) -> list[dict]:
    """ASR per (proportion, seed) plus mean/std rows per proportion."""
    seeds = list(config.experiment.seeds if seeds is None else seeds)
    rows = []
    for p in proportions:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"proportion {p} outside (0, 1]")
        cfg = config.with_overrides(nbsp__proportion=float(p))
        values = []
        for seed in seeds:
            out = None if out_root is None else Path(out_root) / f"p{p}" / f"seed{seed}"
            art = run_cycling_experiment(cfg, seed, out)
            value = art.metrics.get("asr", math.nan)
            values.append(value)
            rows.append({"proportion": p, "seed": seed, "asr": value})
        mean, std = mean_std(values)
        rows.append({"proportion": p, "seed": "mean", "asr": mean, "std": std})
    return rows
