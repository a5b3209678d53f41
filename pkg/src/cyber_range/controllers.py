"""Adversary classifiers: a per-window epsilon-greedy bandit and the scan-count heuristic."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .adversaries import AdversaryKind
from .sim import N_BITS, Activity, BlueObservation, decode_bits52

WINDOW = 4
ACTIONS = (0, 1, 2)
TABLE_FORMAT = "cyber-range/bandit-table"
TABLE_VERSION = 1

WindowKey = bytes


def _bits(obs: "BlueObservation | Sequence[int]") -> Sequence[int]:
    bits = obs.bits52 if isinstance(obs, BlueObservation) else obs
    if len(bits) != N_BITS:
        raise ValueError(f"expected a {N_BITS}-bit observation, got {len(bits)}")
    return bits


def window_key(history: Sequence["BlueObservation | Sequence[int]"]) -> WindowKey:
    """Older-first concatenation of the last four observations, zero-padded on the left."""
    if len(history) > WINDOW:
        raise ValueError(f"window holds at most {WINDOW} observations")
    value = 0
    for _ in range(WINDOW - len(history)):
        value <<= N_BITS
    for obs in history:
        for b in _bits(obs):
            value = (value << 1) | b
    return value.to_bytes(WINDOW * N_BITS // 8, "big")


def key_bits(key: WindowKey) -> list[int]:
    value = int.from_bytes(key, "big")
    n = WINDOW * N_BITS
    return [(value >> (n - 1 - i)) & 1 for i in range(n)]


@dataclass
class BanditEntry:
    q: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    n: list[int] = field(default_factory=lambda: [0, 0, 0])


@dataclass(frozen=True)
class Prediction:
    kind: AdversaryKind
    key: WindowKey
    explored: bool = False

    @property
    def action(self) -> int:
        return int(self.kind)


@dataclass
class BanditTable:
    """One three-armed bandit per observed window.

    ``entries`` doubles as the set of bandits and its keys as the set of
    known states.
    """

    epsilon: float = 0.01
    entries: dict[WindowKey, BanditEntry] = field(default_factory=dict)

    @property
    def known_states(self) -> set[WindowKey]:
        return set(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def predict(self, key: WindowKey, rng: random.Random, epsilon: float | None = None) -> Prediction:
        return bandit_predict(self, key, rng, epsilon)

    def update(self, key: WindowKey, action: int, reward: float) -> None:
        bandit_update(self, key, action, reward)

    def greedy(self, key: WindowKey) -> int:
        entry = self.entries.get(key)
        if entry is None:
            return 0
        return _argmax(entry.q)

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "epsilon": self.epsilon,
            "entries": {
                key.hex(): {"q": list(e.q), "n": list(e.n)} for key, e in sorted(self.entries.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BanditTable":
        if doc.get("format") != TABLE_FORMAT:
            raise ValueError("not a bandit table document")
        if doc.get("version") != TABLE_VERSION:
            raise ValueError(f"unsupported bandit table version {doc.get('version')!r}")
        table = cls(epsilon=float(doc.get("epsilon", 0.01)))
        size = WINDOW * N_BITS // 8
        for hexkey, e in doc["entries"].items():
            key = bytes.fromhex(hexkey)
            if len(key) != size:
                raise ValueError(f"bandit key {hexkey[:12]}... has the wrong length")
            q, n = [float(x) for x in e["q"]], [int(x) for x in e["n"]]
            if len(q) != len(ACTIONS) or len(n) != len(ACTIONS):
                raise ValueError("bandit entries need three q and n values")
            table.entries[key] = BanditEntry(q, n)
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BanditTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _argmax(q: Sequence[float]) -> int:
    best = 0
    for a in range(1, len(q)):
        if q[a] > q[best]:
            best = a
    return best


def bandit_predict(table: BanditTable, key: WindowKey, rng: random.Random, epsilon: float | None = None) -> Prediction:
    """Epsilon-greedy choice; an unseen window gets a fresh zero-valued bandit first."""
    eps = table.epsilon if epsilon is None else epsilon
    entry = table.entries.get(key)
    if entry is None:
        entry = table.entries[key] = BanditEntry()
    if eps > 0 and rng.random() < eps:
        return Prediction(AdversaryKind(rng.randrange(len(ACTIONS))), key, explored=True)
    return Prediction(AdversaryKind(_argmax(entry.q)), key)


def bandit_update(table: BanditTable, key: WindowKey, action: int, reward: float) -> BanditTable:
    """Sample-average step: N(A) += 1, then Q(A) += (R - Q(A)) / N(A)."""
    entry = table.entries.get(key)
    if entry is None:
        raise KeyError("update for a window that was never predicted on")
    a = int(action)
    if a not in ACTIONS:
        raise ValueError(f"action {action!r} not in {ACTIONS}")
    if not math.isfinite(reward):
        raise ValueError("reward must be finite")
    entry.n[a] += 1
    entry.q[a] += (reward - entry.q[a]) / entry.n[a]
    return table


def merge_tables(*tables: BanditTable) -> BanditTable:
    """Key-wise union with count-weighted Q averaging."""
    out = BanditTable(epsilon=tables[0].epsilon if tables else 0.01)
    for t in tables:
        for key, e in t.entries.items():
            cur = out.entries.get(key)
            if cur is None:
                out.entries[key] = BanditEntry(list(e.q), list(e.n))
                continue
            for a in ACTIONS:
                n = cur.n[a] + e.n[a]
                if n:
                    cur.q[a] = (cur.q[a] * cur.n[a] + e.q[a] * e.n[a]) / n
                cur.n[a] = n
    return out


# Called with (adversary kind, episode seed); returns the four-observation window.
EpisodeFactory = Callable[[AdversaryKind, int], Sequence[BlueObservation]]

TRAIN_MIX = {AdversaryKind.MEANDER: 1 / 3, AdversaryKind.BLINE: 1 / 3, AdversaryKind.USER_BENIGN: 1 / 3}


def bandit_train(
    env_factory: EpisodeFactory | None,
    timesteps: int,
    epsilon: float,
    rng: random.Random,
    kinds: Iterable[AdversaryKind] = tuple(AdversaryKind),
) -> BanditTable:
    """Train on 4-step episodes until at least ``timesteps`` environment steps are used."""
    if timesteps <= 0:
        raise ValueError("timesteps must be positive")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if env_factory is None:
        from .harness import opening_window

        env_factory = opening_window
    kinds = list(kinds)
    table = BanditTable(epsilon=epsilon)
    used = 0
    while used < timesteps:
        truth = kinds[rng.randrange(len(kinds))]
        window = env_factory(truth, rng.getrandbits(63))
        used += WINDOW
        key = window_key(window)
        pred = bandit_predict(table, key, rng)
        bandit_update(table, key, pred.action, 1.0 if pred.kind is truth else -1.0)
    return table


def heuristic_predict(history: Sequence["BlueObservation | Sequence[int]"]) -> AdversaryKind:
    """Two or more distinct hosts showing scan/exploit activity means Meander.

    Anything else is BLine or the benign user; both come back as BLINE.
    """
    if len(history) != WINDOW:
        raise ValueError(f"heuristic needs exactly {WINDOW} observations")
    touched: set[int] = set()
    for obs in history:
        if isinstance(obs, BlueObservation):
            _bits(obs)
            touched.update(i for i, a in enumerate(obs.activity) if a != Activity.NONE)
        else:
            for i, (act, _) in enumerate(decode_bits52(_bits(obs))):
                if act != Activity.NONE:
                    touched.add(i)
    return AdversaryKind.MEANDER if len(touched) >= 2 else AdversaryKind.BLINE


class HeuristicController:
    name = "heuristic"

    def classify(self, window: Sequence[BlueObservation]) -> AdversaryKind:
        return heuristic_predict(window)


class BanditController:
    """Greedy (epsilon 0 by default) read-out of a trained table."""

    name = "bandit"

    def __init__(self, table: BanditTable, rng: random.Random | None = None, epsilon: float = 0.0):
        self.table = table
        self.rng = rng or random.Random(0)
        self.epsilon = epsilon

    def classify(self, window: Sequence[BlueObservation]) -> AdversaryKind:
        key = window_key(window)
        if self.epsilon == 0.0:
            return AdversaryKind(self.table.greedy(key))
        return bandit_predict(self.table, key, self.rng, self.epsilon).kind


class ConstantController:
    def __init__(self, kind: AdversaryKind):
        self.kind = kind
        self.name = f"constant-{kind.label}"

    def classify(self, window: Sequence[BlueObservation]) -> AdversaryKind:
        return self.kind
