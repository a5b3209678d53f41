"""Turn-based game engine: host state, action resolution, reward, observations.

One call to :func:`step` resolves the red action and then the blue action,
samples outcomes from the episode RNG, scores the turn and returns the
defender's observation in all three encodings.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum
from fractions import Fraction
from functools import cached_property
from typing import Any, Sequence

from .topology import AddressBook, HostKind, Network, ResolutionError, ServiceSpec

N_BITS = 52


class ActionError(ValueError):
    """A malformed action: unknown target, wrong arity, wrong verb/target pairing."""


class Activity(IntEnum):
    NONE = 0
    SCANNED = 1
    EXPLOITED = 2


class Access(IntEnum):
    NONE = 0
    USER = 1
    ADMIN = 2


# 2-bit codes; 10 is never emitted.
_CODE = {0: (0, 0), 1: (0, 1), 2: (1, 1)}
_DECODE = {(0, 0): 0, (0, 1): 1, (1, 1): 2}
_LEVEL_FLOAT = (0.0, 0.5, 1.0)


class BlueVerb(str, Enum):
    SLEEP = "Sleep"
    ANALYSE = "Analyse"
    REMOVE = "Remove"
    RESTORE = "Restore"
    DECOY = "Decoy"


class RedVerb(str, Enum):
    SLEEP = "Sleep"
    DISCOVER_REMOTE_SYSTEMS = "DiscoverRemoteSystems"
    DISCOVER_NETWORK_SERVICES = "DiscoverNetworkServices"
    EXPLOIT_REMOTE_SERVICE = "ExploitRemoteService"
    PRIVILEGE_ESCALATE = "PrivilegeEscalate"
    IMPACT = "Impact"

    @property
    def acronym(self) -> str:
        return _ACRONYMS[self]


_ACRONYMS = {
    RedVerb.SLEEP: "Sleep",
    RedVerb.DISCOVER_REMOTE_SYSTEMS: "DRS",
    RedVerb.DISCOVER_NETWORK_SERVICES: "DNS",
    RedVerb.EXPLOIT_REMOTE_SERVICE: "ERS",
    RedVerb.PRIVILEGE_ESCALATE: "PE",
    RedVerb.IMPACT: "Impact",
}


@dataclass(frozen=True)
class BlueAction:
    verb: BlueVerb
    target: str | None = None
    decoy_service: str | None = None

    def __str__(self) -> str:
        if self.target is None:
            return self.verb.value
        extra = f":{self.decoy_service}" if self.decoy_service else ""
        return f"{self.verb.value} {self.target}{extra}"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"verb": self.verb.value, "target": self.target}
        if self.decoy_service is not None:
            d["decoy_service"] = self.decoy_service
        return d


BLUE_SLEEP = BlueAction(BlueVerb.SLEEP)


@dataclass(frozen=True)
class RedAction:
    """``target`` is a subnet id for DiscoverRemoteSystems, a host address otherwise."""

    verb: RedVerb
    target: int | str | None = None
    port: int | None = None

    def __str__(self) -> str:
        if self.target is None:
            return self.verb.value
        port = f":{self.port}" if self.port is not None else ""
        return f"{self.verb.acronym} {self.target}{port}"


RED_SLEEP = RedAction(RedVerb.SLEEP)


@dataclass(frozen=True)
class SuccessProbabilities:
    """Per-action-class success probabilities for otherwise valid actions."""

    exploit_user: float = 1.0
    exploit_server: float = 0.9
    escalate: float = 0.95
    scan: float = 1.0
    impact: float = 1.0
    restore: float = 0.95
    remove: float = 0.95
    analyse: float = 1.0
    decoy: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            p = getattr(self, f.name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"success probability {f.name}={p} outside [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> "SuccessProbabilities":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown success probability keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class HostState:
    activity: Activity = Activity.NONE
    access: Access = Access.NONE
    decoys: list[ServiceSpec] = field(default_factory=list)
    impacted: bool = False


# -- observation encodings ----------------------------------------------------

Knowledge = Sequence[tuple[int, int]]


def encode_bits52(knowledge: Knowledge) -> tuple[int, ...]:
    """Per host: two activity bits then two access bits, canonical host order."""
    out: list[int] = []
    for activity, access in knowledge:
        out.extend(_CODE[int(activity)])
        out.extend(_CODE[int(access)])
    return tuple(out)


def decode_bits52(bits: Sequence[int]) -> list[tuple[int, int]]:
    if len(bits) % 4:
        raise ValueError(f"observation length {len(bits)} is not a multiple of 4")
    out = []
    for i in range(0, len(bits), 4):
        try:
            act = _DECODE[(int(bits[i]), int(bits[i + 1]))]
            acc = _DECODE[(int(bits[i + 2]), int(bits[i + 3]))]
        except KeyError:
            raise ValueError(f"invalid 2-bit code at offset {i}") from None
        out.append((act, acc))
    return out


def encode_ak(bits52: Sequence[int], last_success: bool) -> tuple[int, ...]:
    return tuple(bits52) + (1 if last_success else 0,)


def encode_sr(knowledge: Knowledge, last_success: bool) -> tuple[float, ...]:
    out: list[float] = []
    for activity, access in knowledge:
        out.append(_LEVEL_FLOAT[int(activity)])
        out.append(_LEVEL_FLOAT[int(access)])
    out.append(1.0 if last_success else 0.0)
    return tuple(out)


@dataclass(frozen=True)
class BlueObservation:
    """The defender's view; every encoding derives from the same knowledge."""

    activity: tuple[int, ...]
    access: tuple[int, ...]
    last_success: bool = True

    @classmethod
    def clear(cls, n_hosts: int = 13, last_success: bool = True) -> "BlueObservation":
        zeros = (0,) * n_hosts
        return cls(zeros, zeros, last_success)

    @classmethod
    def from_bits52(cls, bits: Sequence[int], last_success: bool = True) -> "BlueObservation":
        k = decode_bits52(bits)
        return cls(tuple(a for a, _ in k), tuple(c for _, c in k), last_success)

    @property
    def knowledge(self) -> list[tuple[int, int]]:
        return list(zip(self.activity, self.access))

    @cached_property
    def bits52(self) -> tuple[int, ...]:
        return encode_bits52(zip(self.activity, self.access))

    @property
    def bits_ak(self) -> tuple[int, ...]:
        return encode_ak(self.bits52, self.last_success)

    @property
    def floats_sr(self) -> tuple[float, ...]:
        return encode_sr(zip(self.activity, self.access), self.last_success)

    def encoding(self, name: str) -> tuple:
        if name == "bits52":
            return self.bits52
        if name == "ak":
            return self.bits_ak
        if name == "sr":
            return self.floats_sr
        raise ValueError(f"unknown encoding {name!r}")

    def bits52_hex(self) -> str:
        return bits_to_hex(self.bits52)


def bits_to_hex(bits: Sequence[int]) -> str:
    value = 0
    for b in bits:
        value = (value << 1) | b
    return format(value, f"0{(len(bits) + 3) // 4}x")


# -- state ----------------------------------------------------------------------


@dataclass(frozen=True)
class RedView:
    """What the attacker learns from its own action this turn."""

    action: RedAction
    success: bool
    discovered: tuple[str, ...] = ()
    services: tuple[tuple[int, str, bool], ...] = ()
    sessions: dict[str, Access] = field(default_factory=dict)
    revealed_subnets: tuple[int, ...] = ()
    known_subnets: tuple[int, ...] = ()
    host_kind: HostKind | None = None


@dataclass
class SimState:
    net: Network
    book: AddressBook
    hosts: list[HostState]
    rng: random.Random
    probs: SuccessProbabilities
    turn: int = 0
    last_blue_success: bool = True
    blue_access: list[Access] = field(default_factory=list)

    @property
    def red_position(self) -> list[str]:
        return [self.net.hosts[i].name for i, h in enumerate(self.hosts) if h.access >= Access.USER]

    def host_state(self, name: str) -> HostState:
        return self.hosts[self.net.index(name)]

    def observation(self) -> BlueObservation:
        return BlueObservation(
            tuple(int(h.activity) for h in self.hosts),
            tuple(int(a) for a in self.blue_access),
            self.last_blue_success,
        )

    def red_sessions(self) -> dict[str, Access]:
        return {
            self.book.addr_of(self.net.hosts[i].name): h.access
            for i, h in enumerate(self.hosts)
            if h.access >= Access.USER
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.turn}|{int(self.last_blue_success)}|".encode())
        for hs, ba in zip(self.hosts, self.blue_access):
            decoys = ",".join(str(d.port) for d in hs.decoys)
            h.update(f"{int(hs.activity)}{int(hs.access)}{int(hs.impacted)}{int(ba)}[{decoys}];".encode())
        return h.hexdigest()[:16]

    def snapshot(self) -> tuple:
        """Hashable structural summary, used for equality checks in tests."""
        return (
            self.turn,
            self.last_blue_success,
            tuple((h.activity, h.access, tuple(h.decoys), h.impacted) for h in self.hosts),
            tuple(self.blue_access),
            tuple(sorted(self.book.bindings.items())),
        )


@dataclass(frozen=True)
class StepOutcome:
    turn: int
    red_action: RedAction
    blue_action: BlueAction
    red_success: bool
    blue_success: bool
    reward: float
    blue_obs: BlueObservation
    red_view: RedView
    decoy_triggered: bool = False
    impact: bool = False


def reset(net: Network, seed: int, probs: SuccessProbabilities | None = None) -> tuple[SimState, BlueObservation]:
    rng = random.Random(seed)
    book = AddressBook(net, rng)
    hosts = [HostState() for _ in net.hosts]
    hosts[net.index(net.foothold_host)].access = Access.USER
    state = SimState(
        net=net,
        book=book,
        hosts=hosts,
        rng=rng,
        probs=probs or SuccessProbabilities(),
        blue_access=[Access.NONE] * len(net.hosts),
    )
    return state, state.observation()


def initial_red_view(state: SimState) -> RedView:
    foothold = state.net.host(state.net.foothold_host)
    return RedView(
        action=RED_SLEEP,
        success=True,
        sessions=state.red_sessions(),
        known_subnets=(foothold.subnet,),
    )


# -- reward -----------------------------------------------------------------------

USER_HOST_PENALTY = Fraction(-1, 10)
SERVER_PENALTY = Fraction(-1)
IMPACT_PENALTY = Fraction(-10)
RESTORE_PENALTY = Fraction(-1)


def reward_from_counts(admin_user_hosts: int, admin_servers: int, impact: bool, restored: bool) -> float:
    tenths = admin_user_hosts + 10 * admin_servers + (100 if impact else 0) + (10 if restored else 0)
    return -tenths / 10 if tenths else 0.0


def compute_reward(state: SimState, blue: BlueAction, red_outcome: "StepOutcome | dict | bool", blue_success: bool | None = None) -> float:
    """Blue's reward for the turn just resolved; always <= 0.

    ``red_outcome`` is either a :class:`StepOutcome` or a mapping with an
    ``impact`` flag. ``blue_success`` defaults to the state's record of the
    last blue action.
    """
    if isinstance(red_outcome, StepOutcome):
        impact = red_outcome.impact
    elif isinstance(red_outcome, dict):
        impact = bool(red_outcome.get("impact", False))
    else:
        impact = bool(red_outcome)
    if blue_success is None:
        blue_success = state.last_blue_success
    users = servers = 0
    for spec, hs in zip(state.net.hosts, state.hosts):
        if hs.access is Access.ADMIN:
            if spec.kind.is_server:
                servers += 1
            else:
                users += 1
    restored = blue.verb is BlueVerb.RESTORE and blue_success
    return reward_from_counts(users, servers, impact, restored)


# -- action resolution ------------------------------------------------------------


def _check_red(state: SimState, red: RedAction) -> int | None:
    """Validate ``red``; return the target host index (None for Sleep/DRS)."""
    if not isinstance(red, RedAction):
        raise ActionError(f"not a RedAction: {red!r}")
    verb = red.verb
    if verb is RedVerb.SLEEP:
        if red.target is not None:
            raise ActionError("Sleep takes no target")
        return None
    if verb is RedVerb.DISCOVER_REMOTE_SYSTEMS:
        if not isinstance(red.target, int) or isinstance(red.target, bool):
            raise ActionError("DiscoverRemoteSystems targets a subnet id")
        try:
            state.net.subnet(red.target)
        except ValueError as exc:
            raise ActionError(str(exc)) from None
        return None
    if not isinstance(red.target, str):
        raise ActionError(f"{verb.value} targets a host address")
    try:
        name = state.book.resolve(red.target)
    except ResolutionError as exc:
        raise ActionError(str(exc)) from None
    idx = state.net.index(name)
    if verb is RedVerb.EXPLOIT_REMOTE_SERVICE and red.port is None:
        raise ActionError("ExploitRemoteService needs a port")
    if verb is RedVerb.IMPACT and state.net.hosts[idx].kind is not HostKind.OP_SERVER:
        raise ActionError("Impact targets only the operational server")
    return idx


def _check_blue(state: SimState, blue: BlueAction) -> int | None:
    if not isinstance(blue, BlueAction):
        raise ActionError(f"not a BlueAction: {blue!r}")
    if blue.verb is BlueVerb.SLEEP:
        if blue.target is not None:
            raise ActionError("Sleep takes no target")
        return None
    if blue.target is None:
        raise ActionError(f"{blue.verb.value} needs a target host")
    try:
        return state.net.index(blue.target)
    except ValueError as exc:
        raise ActionError(str(exc)) from None


def _can_reach(state: SimState, dst: int) -> bool:
    net = state.net
    dst_name = net.hosts[dst].name
    for i, h in enumerate(state.hosts):
        if h.access >= Access.USER and net.reachable(net.hosts[i].name, dst_name):
            return True
    return False


def step(state: SimState, blue: BlueAction, red: RedAction) -> StepOutcome:
    """Advance ``state`` by one turn in place; red resolves before blue.

    Two uniform draws are taken every turn (one per side) whatever the
    actions, so runs that differ only in blue's choices see the same
    outcome rolls.
    """
    red_idx = _check_red(state, red)
    blue_idx = _check_blue(state, blue)
    net, hosts, probs = state.net, state.hosts, state.probs
    red_roll = state.rng.random()
    blue_roll = state.rng.random()

    for h in hosts:
        h.activity = Activity.NONE

    red_success = False
    impact = False
    decoy_triggered = False
    discovered: tuple[str, ...] = ()
    services: tuple[tuple[int, str, bool], ...] = ()
    revealed: tuple[int, ...] = ()
    escalated_kind: HostKind | None = None
    verb = red.verb

    if verb is RedVerb.SLEEP:
        red_success = True
    elif verb is RedVerb.DISCOVER_REMOTE_SYSTEMS:
        sid = red.target
        if any(
            hs.access >= Access.USER and net.subnet_permits(net.hosts[i].subnet, sid)
            for i, hs in enumerate(hosts)
        ) and red_roll < probs.scan:
            red_success = True
            discovered = tuple(
                state.book.addr_of(h.name) for h in net.hosts_in(sid) if h.kind is not HostKind.DEFENDER
            )
    else:
        spec = net.hosts[red_idx]
        hs = hosts[red_idx]
        if verb is RedVerb.DISCOVER_NETWORK_SERVICES:
            if spec.kind is not HostKind.DEFENDER and _can_reach(state, red_idx):
                hs.activity = Activity.SCANNED
                if red_roll < probs.scan:
                    red_success = True
                    listing = [(s.port, s.service, s.exploitable) for s in spec.services]
                    listing += [(d.port, d.service, True) for d in hs.decoys]
                    services = tuple(sorted(listing))
        elif verb is RedVerb.EXPLOIT_REMOTE_SERVICE:
            if spec.kind is not HostKind.DEFENDER and _can_reach(state, red_idx):
                hs.activity = Activity.EXPLOITED
                if any(d.port == red.port for d in hs.decoys):
                    decoy_triggered = True
                else:
                    svc = next((s for s in spec.services if s.port == red.port), None)
                    p = probs.exploit_server if spec.kind.is_server else probs.exploit_user
                    if svc is not None and svc.exploitable and red_roll < p:
                        red_success = True
                        if hs.access < Access.USER:
                            hs.access = Access.USER
        elif verb is RedVerb.PRIVILEGE_ESCALATE:
            if hs.access >= Access.USER and red_roll < probs.escalate:
                red_success = True
                hs.access = Access.ADMIN
                escalated_kind = spec.kind
                revealed = tuple(
                    s.id for s in net.subnets if net.subnet_permits(spec.subnet, s.id) and s.id != spec.subnet
                )
        elif verb is RedVerb.IMPACT:
            if hs.access is Access.ADMIN and red_roll < probs.impact:
                red_success = True
                impact = True
                hs.impacted = True

    blue_success = _resolve_blue(state, blue, blue_idx, blue_roll)

    reward = compute_reward(state, blue, {"impact": impact}, blue_success)

    turn = state.turn
    state.turn += 1
    state.last_blue_success = blue_success
    view = RedView(
        action=red,
        success=red_success,
        discovered=discovered,
        services=services,
        sessions=state.red_sessions(),
        revealed_subnets=revealed,
        host_kind=escalated_kind,
    )
    return StepOutcome(
        turn=turn,
        red_action=red,
        blue_action=blue,
        red_success=red_success,
        blue_success=blue_success,
        reward=reward,
        blue_obs=state.observation(),
        red_view=view,
        decoy_triggered=decoy_triggered,
        impact=impact,
    )


def _resolve_blue(state: SimState, blue: BlueAction, idx: int | None, roll: float) -> bool:
    verb = blue.verb
    if verb is BlueVerb.SLEEP:
        return True
    net, probs = state.net, state.probs
    spec = net.hosts[idx]
    hs = state.hosts[idx]
    foothold = spec.name == net.foothold_host
    if verb is BlueVerb.ANALYSE:
        if roll < probs.analyse:
            state.blue_access[idx] = hs.access
            return True
        return False
    if verb is BlueVerb.REMOVE:
        if roll >= probs.remove:
            return False
        # Terminating processes also inspects them: knowledge is refreshed.
        if hs.access is Access.USER and not foothold:
            hs.access = Access.NONE
            state.blue_access[idx] = Access.NONE
            return True
        if hs.access is Access.ADMIN:
            state.blue_access[idx] = Access.ADMIN
        return False
    if verb is BlueVerb.RESTORE:
        if foothold or roll >= probs.restore:
            return False
        hs.access = Access.NONE
        hs.impacted = False
        state.blue_access[idx] = Access.NONE
        return True
    if verb is BlueVerb.DECOY:
        deployed = {d.port for d in hs.decoys}
        free = [d for d in spec.decoy_templates if d.port not in deployed]
        if blue.decoy_service is not None:
            free = [d for d in free if d.service == blue.decoy_service]
        if not free or roll >= probs.decoy:
            return False
        hs.decoys.append(free[0])
        return True
    raise ActionError(f"unhandled blue verb {verb!r}")


def red_target_name(state: SimState, red: RedAction) -> str | None:
    """Hostname (or subnet name) the action targets, resolved via the episode book."""
    if red.target is None:
        return None
    if red.verb is RedVerb.DISCOVER_REMOTE_SYSTEMS:
        return state.net.subnet(int(red.target)).name
    return state.book.resolve(str(red.target))
