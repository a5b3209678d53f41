"""Batch episode runner, controller-accuracy evaluation, ablation driver and statistics.

Seed splitting: episode ``i`` of a run seeded ``s`` uses
``derive_seed(s, "episode", i)``; inside an episode the environment, the
attacker and the adversary draw use ``derive_seed(episode_seed, "env")``,
``"red"`` and ``"mix"``. Nothing else feeds randomness into an episode, so
execution order and worker count never change a trace.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .adversaries import AdversaryKind, make_adversary, sample_adversary, validate_mix
from .controllers import BanditController, BanditTable, HeuristicController
from .defence import DefencePolicy, HierarchicalDefender, make_policy
from .explain import EpisodeTrace, FeatureMask, TraceStep, ablate, write_traces
from .sim import BlueObservation, SuccessProbabilities, initial_red_view, red_target_name, reset, step
from .topology import Network, default_topology, load_topology

SEED_ENV = "CYBER_RANGE_SEED"


def derive_seed(seed: int, *parts: Any) -> int:
    text = ":".join(str(p) for p in (seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


# -- configuration -------------------------------------------------------------------


class DefenderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy: str | None = None
    controller: Literal["bandit", "heuristic"] | None = None
    specialists: dict[str, str] = Field(default_factory=lambda: {"meander": "greedy_restore", "bline": "decoy_wall"})
    bandit_table: str | None = None

    @model_validator(mode="after")
    def _check(self) -> "DefenderConfig":
        if (self.policy is None) == (self.controller is None):
            raise ValueError("give exactly one of 'policy' or 'controller'")
        if self.controller == "bandit" and not self.bandit_table:
            raise ValueError("bandit controller needs 'bandit_table'")
        if self.controller is not None:
            unknown = set(self.specialists) - {"meander", "bline", "default"}
            if unknown:
                raise ValueError(f"unknown specialist slots {sorted(unknown)}")
        return self


class MixConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mix: dict[str, float]

    @field_validator("mix")
    @classmethod
    def _valid(cls, v: dict[str, float]) -> dict[str, float]:
        validate_mix(v)
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int | None = None
    episodes: int = Field(1, ge=1)
    episode_length: int = Field(100, ge=4)
    adversary: Union[str, MixConfig] = "bline"
    defender: Union[str, DefenderConfig] = "sleep"
    success_probabilities: dict[str, float] = Field(default_factory=dict)
    topology: str | None = None
    workers: int = Field(1, ge=1)
    traces: bool = True
    trace_file: str = "traces.jsonl"
    stats_file: str = "stats.json"

    @field_validator("adversary")
    @classmethod
    def _adversary(cls, v):
        if isinstance(v, str):
            AdversaryKind.parse(v)
        return v

    @field_validator("defender")
    @classmethod
    def _defender(cls, v):
        if isinstance(v, str):
            make_policy(v)
        return v

    @field_validator("success_probabilities")
    @classmethod
    def _probs(cls, v):
        SuccessProbabilities.from_dict(v)
        return v

    def resolved_seed(self) -> int:
        if self.seed is not None:
            return self.seed
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ValueError(f"{SEED_ENV}={env!r} is not an integer") from None
        return 0

    def probs(self) -> SuccessProbabilities:
        return SuccessProbabilities.from_dict(self.success_probabilities)

    def network(self) -> Network:
        return load_topology(self.topology) if self.topology else default_topology()

    def mix(self) -> dict[AdversaryKind, float]:
        if isinstance(self.adversary, str):
            return {AdversaryKind.parse(self.adversary): 1.0}
        return validate_mix(self.adversary.mix)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


def build_defender(spec: "str | DefenderConfig", net: Network, base_dir: Path | None = None) -> DefencePolicy:
    if isinstance(spec, str):
        return make_policy(spec, net)
    if spec.policy is not None:
        return make_policy(spec.policy, net)
    if spec.controller == "heuristic":
        controller = HeuristicController()
    else:
        path = Path(spec.bandit_table)
        if base_dir is not None and not path.is_absolute() and not path.exists():
            path = base_dir / path
        controller = BanditController(BanditTable.load(path))
    slots = spec.specialists
    meander = make_policy(slots.get("meander", "greedy_restore"), net)
    bline = make_policy(slots.get("bline", "decoy_wall"), net)
    default = make_policy(slots["default"], net) if "default" in slots else None
    return HierarchicalDefender(controller, meander, bline, default)


# -- episodes ------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    index: int
    seed: int
    adversary: AdversaryKind
    total_reward: float
    trace: EpisodeTrace | None = None
    decided: AdversaryKind | None = None


def run_episode(
    net: Network,
    adversary: AdversaryKind,
    defender: DefencePolicy,
    seed: int,
    length: int,
    probs: SuccessProbabilities | None = None,
    mask: FeatureMask | None = None,
    record: bool = True,
    index: int = 0,
) -> EpisodeResult:
    state, obs = reset(net, derive_seed(seed, "env"), probs)
    red = make_adversary(adversary, net, random.Random(derive_seed(seed, "red")))
    defender.reset()
    view = initial_red_view(state)
    trace = EpisodeTrace(seed=seed, adversary=adversary, episode=index) if record else None
    rewards = []
    for turn in range(length):
        seen = obs if mask is None else ablate(obs, mask)
        blue_action = defender.act(seen, turn)
        red_action = red.act(view)
        if record:
            pre = state.digest()
            target = red_target_name(state, red_action)
        out = step(state, blue_action, red_action)
        rewards.append(out.reward)
        if record:
            trace.record_step(
                TraceStep(
                    turn=out.turn,
                    red_verb=red_action.verb.value,
                    red_target=target,
                    red_port=red_action.port,
                    red_success=out.red_success,
                    decoy=out.decoy_triggered,
                    blue_action=blue_action.to_dict(),
                    blue_success=out.blue_success,
                    reward=out.reward,
                    bits52=out.blue_obs.bits52_hex(),
                    pre_digest=pre,
                    post_digest=state.digest(),
                )
            )
        obs, view = out.blue_obs, out.red_view
    return EpisodeResult(
        index=index,
        seed=seed,
        adversary=adversary,
        total_reward=math.fsum(rewards),
        trace=trace,
        decided=getattr(defender, "decided", None),
    )


_OPENING_DEFENDERS: dict[int, DefencePolicy] = {}


def opening_window(
    kind: AdversaryKind,
    seed: int,
    net: Network | None = None,
    probs: SuccessProbabilities | None = None,
    steps: int = 4,
) -> list[BlueObservation]:
    """Observations 1..4 of an episode played by the default (BLine specialist) defender."""
    net = net or default_topology()
    defender = _OPENING_DEFENDERS.get(id(net))
    if defender is None:
        defender = _OPENING_DEFENDERS[id(net)] = make_policy("decoy_wall", net)
    defender.reset()
    state, obs = reset(net, derive_seed(seed, "env"), probs)
    red = make_adversary(kind, net, random.Random(derive_seed(seed, "red")))
    view = initial_red_view(state)
    window = []
    for turn in range(steps):
        out = step(state, defender.act(obs, turn), red.act(view))
        obs, view = out.blue_obs, out.red_view
        window.append(obs)
    return window


# -- statistics -----------------------------------------------------------------------


@dataclass
class BatchStats:
    mean: float
    std: float
    min: float
    max: float
    count: int
    per_adversary: dict[str, "BatchStats"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "std": self.std, "min": self.min, "max": self.max, "count": self.count}
        if self.per_adversary:
            d["per_adversary"] = {k: v.to_dict() for k, v in sorted(self.per_adversary.items())}
        return d

    def table(self, title: str = "all") -> str:
        rows = [(title, self)] + sorted(self.per_adversary.items())
        lines = [f"{'group':<12}{'episodes':>10}{'mean':>12}{'std':>12}{'min':>12}{'max':>12}"]
        for name, s in rows:
            lines.append(f"{name:<12}{s.count:>10}{s.mean:>12.3f}{s.std:>12.3f}{s.min:>12.3f}{s.max:>12.3f}")
        return "\n".join(lines) + "\n"


def stats(rewards: Sequence[float]) -> BatchStats:
    """Exact mean and population standard deviation."""
    if not rewards:
        raise ValueError("stats of an empty reward list")
    values = [float(r) for r in rewards]
    return BatchStats(
        mean=float(statistics.mean(values)),
        std=float(statistics.pstdev(values)),
        min=min(values),
        max=max(values),
        count=len(values),
    )


def batch_stats(results: Iterable[EpisodeResult]) -> BatchStats:
    results = list(results)
    overall = stats([r.total_reward for r in results])
    groups: dict[str, list[float]] = {}
    for r in results:
        groups.setdefault(r.adversary.label, []).append(r.total_reward)
    overall.per_adversary = {k: stats(v) for k, v in groups.items()}
    return overall


# -- batch runs ------------------------------------------------------------------------


def _episode_from_config(cfg: RunConfig, index: int, mask: FeatureMask | None, record: bool, base_dir: Path | None):
    net = cfg.network()
    seed = derive_seed(cfg.resolved_seed(), "episode", index)
    kind = sample_adversary(random.Random(derive_seed(seed, "mix")), cfg.mix())
    defender = build_defender(cfg.defender, net, base_dir)
    return run_episode(net, kind, defender, seed, cfg.episode_length, cfg.probs(), mask, record, index)


def _run_chunk(payload: tuple[str, list[int], dict | None, bool, str | None]) -> list[EpisodeResult]:
    cfg_json, indices, mask, record, base_dir = payload
    cfg = RunConfig.model_validate_json(cfg_json)
    m = FeatureMask(**mask) if mask is not None else None
    base = Path(base_dir) if base_dir else None
    return [_episode_from_config(cfg, i, m, record, base) for i in indices]


@dataclass
class BatchResult:
    stats: BatchStats
    episodes: list[EpisodeResult]


def run_episodes(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    mask: FeatureMask | None = None,
    base_dir: str | Path | None = None,
) -> BatchResult:
    """Run ``cfg.episodes`` episodes; with ``out_dir`` also write traces and stats."""
    record = out_dir is not None and cfg.traces
    base = Path(base_dir) if base_dir is not None else None
    if mask is not None and mask.is_identity:
        mask = None
    indices = list(range(cfg.episodes))
    if cfg.workers == 1:
        net = cfg.network()
        probs = cfg.probs()
        defender = build_defender(cfg.defender, net, base)
        seed = cfg.resolved_seed()
        mix = cfg.mix()
        results = []
        for i in indices:
            ep_seed = derive_seed(seed, "episode", i)
            kind = sample_adversary(random.Random(derive_seed(ep_seed, "mix")), mix)
            results.append(run_episode(net, kind, defender, ep_seed, cfg.episode_length, probs, mask, record, i))
    else:
        cfg_json = cfg.model_copy(update={"seed": cfg.resolved_seed()}).model_dump_json()
        chunks = [indices[w :: cfg.workers] for w in range(cfg.workers)]
        payloads = [(cfg_json, c, mask.to_dict() if mask else None, record, str(base) if base else None) for c in chunks if c]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = [r for chunk in pool.map(_run_chunk, payloads) for r in chunk]
        results.sort(key=lambda r: r.index)
    summary = batch_stats(results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if record:
            write_traces(out / cfg.trace_file, (r.trace for r in results))
        (out / cfg.stats_file).write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / (Path(cfg.stats_file).stem + ".txt")).write_text(summary.table(), encoding="utf-8")
    return BatchResult(summary, results)


def run_ablation(
    cfg: RunConfig,
    masks: Sequence[FeatureMask],
    base_dir: str | Path | None = None,
) -> dict[str, BatchStats]:
    """Baseline plus one re-run per mask, same seeds, observations ablated before the defender."""
    out = {"none": run_episodes(cfg, base_dir=base_dir).stats}
    for m in masks:
        if m.is_identity:
            continue
        out[m.name] = run_episodes(cfg, mask=m, base_dir=base_dir).stats
    return out


# -- controller accuracy ----------------------------------------------------------------


@dataclass
class AccuracyRow:
    correct: int = 0
    total: int = 0

    @property
    def incorrect(self) -> int:
        return self.total - self.correct

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def eval_controller_accuracy(
    controller,
    episodes: int,
    rng: random.Random,
    net: Network | None = None,
    probs: SuccessProbabilities | None = None,
) -> dict[str, AccuracyRow]:
    """Classify the 4-step opening of ``episodes`` episodes drawn 50/50 BLine/Meander."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    table = {AdversaryKind.BLINE.label: AccuracyRow(), AdversaryKind.MEANDER.label: AccuracyRow()}
    for _ in range(episodes):
        truth = AdversaryKind.BLINE if rng.random() < 0.5 else AdversaryKind.MEANDER
        window = opening_window(truth, rng.getrandbits(63), net, probs)
        row = table[truth.label]
        row.total += 1
        if controller.classify(window) is truth:
            row.correct += 1
    return table


def accuracy_to_dict(table: dict[str, AccuracyRow]) -> dict:
    return {
        k: {"correct": v.correct, "incorrect": v.incorrect, "total": v.total, "accuracy": v.accuracy}
        for k, v in sorted(table.items())
    }
