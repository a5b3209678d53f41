"""Defender policies and the controller-routed hierarchical defender.

The specialists here are scripted rule lists. Anything with ``reset`` and
``act(obs, turn)`` can stand in for them, including learned policies.
"""
from __future__ import annotations

from collections import deque
from typing import Protocol, Sequence

from .adversaries import AdversaryKind
from .sim import BLUE_SLEEP, Access, Activity, BlueAction, BlueObservation, BlueVerb
from .topology import HostKind, Network, default_topology


class DefencePolicy(Protocol):
    encoding: str

    def reset(self) -> None: ...

    def act(self, obs: BlueObservation, turn: int) -> BlueAction: ...


class Controller(Protocol):
    name: str

    def classify(self, window: Sequence[BlueObservation]) -> AdversaryKind: ...


class SleepPolicy:
    encoding = "bits52"

    def reset(self) -> None:
        pass

    def act(self, obs: BlueObservation, turn: int) -> BlueAction:
        return BLUE_SLEEP


class GreedyRestorePolicy:
    """Fixed-priority responder reading only the 52-bit view.

    Restore Admin servers, then Remove User-level footholds, then put one
    decoy on each server, then Analyse the host with the freshest activity.
    Remembers which servers it has decoyed and which Removes changed
    nothing (the permanent foothold), since neither shows up in the bits.
    """

    encoding = "bits52"

    def __init__(self, net: Network | None = None):
        self.net = net or default_topology()
        hosts = self.net.hosts
        self._names = [h.name for h in hosts]
        self._servers = [i for i, h in enumerate(hosts) if h.kind.is_server and h.kind is not HostKind.DEFENDER]
        self._decoy_order = [i for i in self._servers if hosts[i].decoy_templates]
        self.reset()

    def reset(self) -> None:
        self.protected: set[int] = set()
        self._futile: dict[int, tuple[int, ...]] = {}
        self._last: tuple[BlueAction, int] | None = None
        self._prev_access: tuple[int, ...] | None = None

    def _note(self, obs: BlueObservation) -> None:
        if self._last is not None:
            action, idx = self._last
            if action.verb is BlueVerb.REMOVE and obs.access[idx] == Access.USER:
                self._futile[idx] = obs.access
            elif action.verb is BlueVerb.RESTORE:
                self._futile.pop(idx, None)
        if self._prev_access is not None:
            for i, (old, new) in enumerate(zip(self._prev_access, obs.access)):
                if old != new:
                    self._futile.pop(i, None)
        self._prev_access = obs.access

    def _emit(self, action: BlueAction, idx: int | None = None) -> BlueAction:
        self._last = (action, idx) if idx is not None else None
        return action

    def _decoy(self) -> BlueAction | None:
        for i in self._decoy_order:
            if i not in self.protected:
                self.protected.add(i)
                return self._emit(BlueAction(BlueVerb.DECOY, self._names[i]), i)
        return None

    def _respond(self, obs: BlueObservation) -> BlueAction | None:
        for i in self._servers:
            if obs.access[i] == Access.ADMIN:
                return self._emit(BlueAction(BlueVerb.RESTORE, self._names[i]), i)
        for i, level in enumerate(obs.access):
            if level == Access.USER and i not in self._futile:
                return self._emit(BlueAction(BlueVerb.REMOVE, self._names[i]), i)
        return None

    def _analyse(self, obs: BlueObservation) -> BlueAction | None:
        best = -1
        for i, a in enumerate(obs.activity):
            if a != Activity.NONE and (best < 0 or a > obs.activity[best]):
                best = i
        if best < 0:
            return None
        return self._emit(BlueAction(BlueVerb.ANALYSE, self._names[best]), best)

    def act(self, obs: BlueObservation, turn: int) -> BlueAction:
        self._note(obs)
        return self._respond(obs) or self._decoy() or self._analyse(obs) or self._emit(BLUE_SLEEP)


class DecoyWallPolicy(GreedyRestorePolicy):
    """Decoys on every enterprise and operational server first, then greedy."""

    def act(self, obs: BlueObservation, turn: int) -> BlueAction:
        self._note(obs)
        return self._decoy() or self._respond(obs) or self._analyse(obs) or self._emit(BLUE_SLEEP)


def greedy_restore_policy(obs: BlueObservation, net: Network | None = None) -> BlueAction:
    """Stateless single-observation form of :class:`GreedyRestorePolicy`."""
    return GreedyRestorePolicy(net).act(obs, 0)


def decoy_wall_policy(obs: BlueObservation, net: Network | None = None, placed: Sequence[str] = ()) -> BlueAction:
    policy = DecoyWallPolicy(net)
    policy.protected.update(policy.net.index(n) for n in placed)
    return policy.act(obs, 0)


POLICIES = {
    "sleep": SleepPolicy,
    "greedy_restore": GreedyRestorePolicy,
    "decoy_wall": DecoyWallPolicy,
}


def make_policy(name: str, net: Network | None = None) -> DefencePolicy:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls() if cls is SleepPolicy else cls(net)


class HierarchicalDefender:
    """Routes each turn through a specialist chosen once by the controller.

    Turns 0-3 use the default policy (the BLine specialist unless given);
    at turn 4 the controller sees observations 1-4 and its verdict is final
    for the rest of the episode. A benign verdict routes to the BLine
    specialist.
    """

    encoding = "bits52"
    decide_at = 4

    def __init__(
        self,
        controller: Controller,
        specialist_meander: DefencePolicy,
        specialist_bline: DefencePolicy,
        default: DefencePolicy | None = None,
    ):
        self.controller = controller
        self.specialist_meander = specialist_meander
        self.specialist_bline = specialist_bline
        self.default = default or specialist_bline
        self.reset()

    def reset(self) -> None:
        self.decided: AdversaryKind | None = None
        self.window: deque[BlueObservation] = deque(maxlen=self.decide_at)
        for p in {id(p): p for p in (self.specialist_meander, self.specialist_bline, self.default)}.values():
            p.reset()

    def specialist_for(self, kind: AdversaryKind) -> DefencePolicy:
        return self.specialist_meander if kind is AdversaryKind.MEANDER else self.specialist_bline

    def classify(self) -> AdversaryKind:
        if self.decided is None:
            window = list(self.window)
            if len(window) < self.decide_at:
                pad = BlueObservation.clear(len(window[-1].activity))
                window = [pad] * (self.decide_at - len(window)) + window
            self.decided = self.controller.classify(window)
        return self.decided

    def act(self, obs: BlueObservation, turn: int) -> BlueAction:
        self.window.append(obs)
        if turn < self.decide_at:
            return self.default.act(obs, turn)
        return self.specialist_for(self.classify()).act(obs, turn)


def hierarchical_act(hd: HierarchicalDefender, obs: BlueObservation, turn: int) -> BlueAction:
    return hd.act(obs, turn)
