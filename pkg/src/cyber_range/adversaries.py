"""Scripted red agents: depth-first BLine, breadth-first Meander, benign Sleep.

Agents only ever act on what their views have told them: addresses come
from DiscoverRemoteSystems results, services from DiscoverNetworkServices.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

from .sim import RED_SLEEP, Access, RedAction, RedVerb, RedView
from .topology import HostKind, Network


class AdversaryKind(IntEnum):
    """Values double as the controller's action ids."""

    MEANDER = 0
    BLINE = 1
    USER_BENIGN = 2

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value: "str | int | AdversaryKind") -> "AdversaryKind":
        if isinstance(value, AdversaryKind):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().lower()
        for kind, label in _LABELS.items():
            if key in (label, kind.name.lower()):
                return kind
        if key in ("user", "none", "sleep"):
            return cls.USER_BENIGN
        raise ValueError(f"unknown adversary {value!r}")


_LABELS = {
    AdversaryKind.MEANDER: "meander",
    AdversaryKind.BLINE: "bline",
    AdversaryKind.USER_BENIGN: "benign",
}


@dataclass
class RedKnowledge:
    """Everything the attacker has learned so far in the episode."""

    subnet_order: list[int] = field(default_factory=list)
    hosts: dict[int, list[str]] = field(default_factory=dict)
    services: dict[str, list[tuple[int, str, bool]]] = field(default_factory=dict)
    sessions: dict[str, Access] = field(default_factory=dict)
    roles: dict[str, HostKind] = field(default_factory=dict)
    tried: dict[str, set[int]] = field(default_factory=dict)

    def absorb(self, view: RedView) -> None:
        for sid in view.known_subnets:
            if sid not in self.subnet_order:
                self.subnet_order.append(sid)
        for sid in view.revealed_subnets:
            if sid not in self.subnet_order:
                self.subnet_order.append(sid)
        self.sessions = dict(view.sessions)
        act = view.action
        if act.verb is RedVerb.DISCOVER_REMOTE_SYSTEMS and view.success:
            self.hosts[int(act.target)] = list(view.discovered)
        elif act.verb is RedVerb.DISCOVER_NETWORK_SERVICES and view.success:
            self.services[act.target] = list(view.services)
            self.tried.pop(act.target, None)
        elif act.verb is RedVerb.EXPLOIT_REMOTE_SERVICE:
            if view.success:
                self.tried.pop(act.target, None)
            else:
                self.tried.setdefault(act.target, set()).add(act.port)
        elif act.verb is RedVerb.PRIVILEGE_ESCALATE and view.success and view.host_kind is not None:
            self.roles[act.target] = view.host_kind

    def exploit_candidates(self, addr: str) -> list[int]:
        tried = self.tried.get(addr, ())
        return [port for port, _, lure in self.services.get(addr, ()) if lure and port not in tried]

    def access(self, addr: str) -> Access:
        return self.sessions.get(addr, Access.NONE)

    def rescan(self, addr: str) -> None:
        self.services.pop(addr, None)
        self.tried.pop(addr, None)


def _attack_host(kb: RedKnowledge, addr: str) -> RedAction:
    """Next kill-chain action against one discovered host."""
    level = kb.access(addr)
    if level is Access.USER:
        return RedAction(RedVerb.PRIVILEGE_ESCALATE, addr)
    if addr not in kb.services:
        return RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, addr)
    ports = kb.exploit_candidates(addr)
    if not ports:
        # every service failed: forget them and port-scan again
        kb.rescan(addr)
        return RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, addr)
    return RedAction(RedVerb.EXPLOIT_REMOTE_SERVICE, addr, ports[0])


# -- BLine ----------------------------------------------------------------------


@dataclass
class BLineState:
    """``route`` lists (subnet id, position within that subnet's discovery listing)."""

    route: list[tuple[int, int]]
    kb: RedKnowledge = field(default_factory=RedKnowledge)
    phase: str = "DRS"
    stage: int = 0
    current_target: str | None = None
    history: list[tuple[int, str]] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Network, route: list[str] | None = None) -> "BLineState":
        names = list(route or net.bline_route)
        if not names:
            raise ValueError("topology defines no BLine route")
        if net.host(names[-1]).kind is not HostKind.OP_SERVER:
            raise ValueError("BLine route must end at the operational server")
        stages = []
        for name in names:
            spec = net.host(name)
            listing = [h.name for h in net.hosts_in(spec.subnet) if h.kind is not HostKind.DEFENDER]
            stages.append((spec.subnet, listing.index(name)))
        return cls(route=stages)


def bline_next(st: BLineState, view: RedView) -> tuple[RedAction, BLineState]:
    """Depth-first kill chain along the fixed route; advances ``st`` in place.

    The first route stage without Admin is always the one worked on, so a
    lost session sends the agent back to re-exploit that predecessor.
    """
    kb = st.kb
    kb.absorb(view)
    action = None
    for i, (sid, pos) in enumerate(st.route):
        if sid not in kb.hosts:
            action = RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, sid)
            st.stage, st.current_target = i, None
            break
        addr = kb.hosts[sid][pos]
        if kb.access(addr) is Access.ADMIN:
            continue
        action = _attack_host(kb, addr)
        st.stage, st.current_target = i, addr
        break
    if action is None:
        sid, pos = st.route[-1]
        st.stage, st.current_target = len(st.route), kb.hosts[sid][pos]
        action = RedAction(RedVerb.IMPACT, st.current_target)
    st.phase = action.verb.acronym
    st.history.append((st.stage, st.phase))
    return action, st


# -- Meander -------------------------------------------------------------------


@dataclass
class MeanderState:
    rng: random.Random
    kb: RedKnowledge = field(default_factory=RedKnowledge)
    frontier: int = 0
    order: dict[int, list[str]] = field(default_factory=dict)
    blocked: set[str] = field(default_factory=set)
    dead: set[str] = field(default_factory=set)
    rescans: dict[str, int] = field(default_factory=dict)
    _session_count: int = 0

    @property
    def known_hosts(self) -> dict[int, list[str]]:
        return self.kb.hosts

    @property
    def scanned(self) -> set[str]:
        return set(self.kb.services)

    @property
    def frontier_subnet(self) -> int:
        return self.kb.subnet_order[self.frontier]


def meander_next(st: MeanderState, view: RedView) -> tuple[RedAction, MeanderState]:
    """Breadth-first sweep: discover, scan every host, exploit, escalate, pivot."""
    kb = st.kb
    kb.absorb(view)
    act = view.action
    if act.verb is RedVerb.DISCOVER_REMOTE_SYSTEMS and view.success:
        sid = int(act.target)
        addrs = list(view.discovered)
        st.rng.shuffle(addrs)
        st.order[sid] = addrs
    elif act.verb is RedVerb.DISCOVER_NETWORK_SERVICES and not view.success:
        st.blocked.add(act.target)
    elif act.verb is RedVerb.DISCOVER_NETWORK_SERVICES and view.success:
        if not kb.exploit_candidates(act.target) and st.rescans.get(act.target, 0) > 0:
            st.dead.add(act.target)
        st.rescans[act.target] = st.rescans.get(act.target, 0) + 1
    if len(kb.sessions) > st._session_count:
        st.blocked.clear()
    st._session_count = len(kb.sessions)

    for addr, level in kb.sessions.items():
        if level is Access.ADMIN and kb.roles.get(addr) is HostKind.OP_SERVER:
            return RedAction(RedVerb.IMPACT, addr), st

    while True:
        sid = st.frontier_subnet
        if sid not in st.order:
            return RedAction(RedVerb.DISCOVER_REMOTE_SYSTEMS, sid), st
        swept = [s for s in kb.subnet_order[: st.frontier + 1] if s in st.order]
        # scan every host of the frontier subnet before exploiting anything
        for addr in st.order[sid]:
            if addr not in kb.services and addr not in st.blocked and addr not in st.dead:
                return RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, addr), st
        for s in swept:
            for addr in st.order[s]:
                if addr in st.dead or addr in st.blocked or kb.access(addr) is not Access.NONE:
                    continue
                return _attack_host(kb, addr), st
        for s in swept:
            for addr in st.order[s]:
                if kb.access(addr) is Access.USER:
                    return RedAction(RedVerb.PRIVILEGE_ESCALATE, addr), st
        if st.frontier + 1 < len(kb.subnet_order):
            st.frontier += 1
            continue
        for s in swept:
            for addr in st.order[s]:
                if addr in st.blocked:
                    return RedAction(RedVerb.DISCOVER_NETWORK_SERVICES, addr), st
        return RED_SLEEP, st


def benign_next() -> RedAction:
    return RED_SLEEP


# -- agents ---------------------------------------------------------------------


class RedAgent:
    kind: AdversaryKind

    def act(self, view: RedView) -> RedAction:  # pragma: no cover - interface
        raise NotImplementedError


class BLineAgent(RedAgent):
    kind = AdversaryKind.BLINE

    def __init__(self, net: Network, route: list[str] | None = None):
        self.state = BLineState.for_network(net, route)

    def act(self, view: RedView) -> RedAction:
        action, self.state = bline_next(self.state, view)
        return action


class MeanderAgent(RedAgent):
    kind = AdversaryKind.MEANDER

    def __init__(self, rng: random.Random):
        self.state = MeanderState(rng=rng)

    def act(self, view: RedView) -> RedAction:
        action, self.state = meander_next(self.state, view)
        return action


class BenignAgent(RedAgent):
    kind = AdversaryKind.USER_BENIGN

    def act(self, view: RedView) -> RedAction:
        return benign_next()


def make_adversary(kind: AdversaryKind, net: Network, rng: random.Random) -> RedAgent:
    kind = AdversaryKind.parse(kind)
    if kind is AdversaryKind.BLINE:
        return BLineAgent(net)
    if kind is AdversaryKind.MEANDER:
        return MeanderAgent(rng)
    return BenignAgent()


def validate_mix(mix: Mapping["AdversaryKind | str", float]) -> dict[AdversaryKind, float]:
    if not mix:
        raise ValueError("adversary mix is empty")
    table: dict[AdversaryKind, float] = {}
    for key, p in mix.items():
        kind = AdversaryKind.parse(key)
        p = float(p)
        if p < 0 or math.isnan(p):
            raise ValueError(f"negative probability for {kind.label}")
        table[kind] = table.get(kind, 0.0) + p
    total = math.fsum(table.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"adversary mix sums to {total}, not 1")
    return table


def sample_adversary(rng: random.Random, mix: Mapping["AdversaryKind | str", float]) -> AdversaryKind:
    table = validate_mix(mix)
    u = rng.random()
    acc = 0.0
    last = None
    for kind in AdversaryKind:
        p = table.get(kind, 0.0)
        if p <= 0:
            continue
        acc += p
        last = kind
        if u < acc:
            return kind
    return last
