"""Episode traces, action-outcome transition graphs, DOT output and ablation masks."""
from __future__ import annotations

import csv
import io
import ipaddress
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .adversaries import AdversaryKind
from .sim import BlueObservation, decode_bits52
from .topology import Network, ResolutionError, default_topology


class TraceError(ValueError):
    pass


# -- traces ------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    """One turn of an episode; ``red_target`` is a hostname or subnet name once recorded."""

    turn: int
    red_verb: str
    red_target: str | None
    red_success: bool
    blue_action: dict
    blue_success: bool
    reward: float
    bits52: str
    pre_digest: str = ""
    post_digest: str = ""
    red_port: int | None = None
    decoy: bool = False

    def to_record(self) -> dict:
        return {
            "turn": self.turn,
            "red_action": {"verb": self.red_verb, "target": self.red_target, "port": self.red_port},
            "red_success": self.red_success,
            "decoy": self.decoy,
            "blue_action": self.blue_action,
            "blue_success": self.blue_success,
            "reward": self.reward,
            "bits52": self.bits52,
            "pre_digest": self.pre_digest,
            "state_digest": self.post_digest,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "TraceStep":
        red = rec["red_action"]
        return cls(
            turn=int(rec["turn"]),
            red_verb=red["verb"],
            red_target=red.get("target"),
            red_port=red.get("port"),
            red_success=bool(rec["red_success"]),
            decoy=bool(rec.get("decoy", False)),
            blue_action=dict(rec["blue_action"]),
            blue_success=bool(rec["blue_success"]),
            reward=float(rec["reward"]),
            bits52=rec["bits52"],
            pre_digest=rec.get("pre_digest", ""),
            post_digest=rec.get("state_digest", ""),
        )


def _is_address(value: str) -> bool:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        return False
    return True


@dataclass
class EpisodeTrace:
    seed: int
    adversary: AdversaryKind | None = None
    episode: int = 0
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def record_step(self, step: TraceStep, resolver: "Callable[[str], str] | Mapping[str, str] | None" = None) -> "EpisodeTrace":
        """Append ``step`` after resolving an address target to its hostname."""
        expected = self.steps[-1].turn + 1 if self.steps else 0
        if step.turn != expected:
            raise TraceError(f"turn {step.turn} recorded out of order (expected {expected})")
        target = step.red_target
        if target is not None and _is_address(target):
            if resolver is None:
                raise TraceError(f"address {target} recorded without a resolver")
            try:
                target = resolver(target) if callable(resolver) else resolver[target]
            except (KeyError, ResolutionError) as exc:
                raise TraceError(f"unresolved address {target}") from exc
            step = replace(step, red_target=target)
        self.steps.append(step)
        return self

    def records(self) -> list[dict]:
        head = {
            "episode": self.episode,
            "seed": self.seed,
            "adversary": self.adversary.label if self.adversary is not None else None,
        }
        return [{**head, **s.to_record()} for s in self.steps]


def record_step(trace: EpisodeTrace, step: TraceStep, resolver=None) -> EpisodeTrace:
    return trace.record_step(step, resolver)


def write_traces(path: str | Path, traces: Iterable[EpisodeTrace]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            for rec in trace.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_traces(*paths: str | Path) -> list[EpisodeTrace]:
    traces: list[EpisodeTrace] = []
    for path in paths:
        current: dict[int, EpisodeTrace] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    ep = int(rec.get("episode", 0))
                    if ep not in current:
                        adv = rec.get("adversary")
                        current[ep] = EpisodeTrace(
                            seed=int(rec.get("seed", 0)),
                            adversary=AdversaryKind.parse(adv) if adv is not None else None,
                            episode=ep,
                        )
                    current[ep].record_step(TraceStep.from_record(rec))
                except (KeyError, TypeError, ValueError) as exc:
                    raise TraceError(f"{path}:{lineno}: {exc}") from exc
        traces.extend(current.values())
    return traces


# -- transition graphs ---------------------------------------------------------

_VERB_ACRONYM = {
    "DiscoverRemoteSystems": "DRS",
    "DiscoverNetworkServices": "DNS",
    "ExploitRemoteService": "ERS",
    "PrivilegeEscalate": "PE",
    "Impact": "Impact",
    "Sleep": "Sleep",
}
_ACTIVITY_NAMES = {1: "Scanned", 2: "Exploited"}


@dataclass
class TransitionGraph:
    """Directed graph over normalised action-outcome states, weighted by observation count."""

    edges: dict[tuple[str, str], int] = field(default_factory=dict)
    first_step: dict[tuple[str, str], int] = field(default_factory=dict)

    @property
    def nodes(self) -> set[str]:
        out: set[str] = set()
        for a, b in self.edges:
            out.add(a)
            out.add(b)
        return out

    def add_edge(self, src: str, dst: str, weight: int = 1, step: int = 0) -> None:
        key = (src, dst)
        self.edges[key] = self.edges.get(key, 0) + weight
        if key not in self.first_step or step < self.first_step[key]:
            self.first_step[key] = step

    def merge(self, other: "TransitionGraph") -> "TransitionGraph":
        out = TransitionGraph(dict(self.edges), dict(self.first_step))
        for key, w in other.edges.items():
            out.add_edge(*key, weight=w, step=other.first_step[key])
        return out

    def total_weight(self) -> int:
        return sum(self.edges.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src", "dst", "weight", "first_step"])
        for (a, b) in sorted(self.edges):
            w.writerow([a, b, self.edges[(a, b)], self.first_step[(a, b)]])
        return buf.getvalue()


def _subnet_of(net: Network, target: str) -> str:
    try:
        return net.subnet(net.host(target).subnet).name
    except ValueError:
        return target


def red_node(step: TraceStep, granularity: str = "host", decoy_nodes: bool = False, net: Network | None = None) -> str:
    verb = _VERB_ACRONYM.get(step.red_verb, step.red_verb)
    if step.red_success:
        outcome = "success"
    elif decoy_nodes and step.decoy:
        outcome = "decoy"
    else:
        outcome = "failure"
    target = step.red_target
    if target is None:
        return f"{verb} / {outcome}"
    if granularity == "subnet":
        target = _subnet_of(net or default_topology(), target)
    return f"{verb} {target} / {outcome}"


def blue_node(step: TraceStep, net: Network | None = None) -> str:
    net = net or default_topology()
    n = len(net.hosts) * 4
    bits = [int(c) for c in format(int(step.bits52, 16), f"0{n}b")]
    events = [
        f"{_ACTIVITY_NAMES[act]} {net.hosts[i].name}"
        for i, (act, _) in enumerate(decode_bits52(bits))
        if act
    ]
    return "OBS " + (", ".join(events) if events else "quiet")


def build_graph(
    traces: Iterable[EpisodeTrace],
    max_steps: int | None = None,
    *,
    perspective: str = "red",
    granularity: str = "host",
    decoy_nodes: bool = False,
    net: Network | None = None,
) -> TransitionGraph:
    """Accumulate consecutive-step transitions, truncating each trace at ``max_steps``."""
    if perspective not in ("red", "blue"):
        raise ValueError(f"unknown perspective {perspective!r}")
    if granularity not in ("host", "subnet"):
        raise ValueError(f"unknown granularity {granularity!r}")
    graph = TransitionGraph()
    for trace in traces:
        steps = trace.steps if max_steps is None else trace.steps[:max_steps]
        if perspective == "red":
            labels = [red_node(s, granularity, decoy_nodes, net) for s in steps]
        else:
            labels = [blue_node(s, net) for s in steps]
        for i in range(1, len(labels)):
            graph.add_edge(labels[i - 1], labels[i], step=steps[i].turn)
    return graph


def _quote(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_dot(graph: TransitionGraph, name: str = "G") -> str:
    """Deterministic DOT text: nodes and edges in lexicographic order."""
    if not graph.edges:
        return f"digraph {name} {{ }}\n"
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for node in sorted(graph.nodes):
        lines.append(f"  {_quote(node)};")
    for (a, b) in sorted(graph.edges):
        lines.append(f"  {_quote(a)} -> {_quote(b)} [label=\"{graph.edges[(a, b)]}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def scan_targets(graph: TransitionGraph) -> set[str]:
    out = set()
    for node in graph.nodes:
        head = node.split(" / ")[0].split(" ", 1)
        if head[0] == "DNS" and len(head) == 2:
            out.add(head[1])
    return out


def classify_by_connectivity(graph: TransitionGraph) -> AdversaryKind:
    """Distinct port-scan targets in an opening graph: 2+ Meander, 1 BLine, 0 benign."""
    n = len(scan_targets(graph))
    if n >= 2:
        return AdversaryKind.MEANDER
    if n == 1:
        return AdversaryKind.BLINE
    return AdversaryKind.USER_BENIGN


# -- ablation ---------------------------------------------------------------------

MASK_GROUPS = {"access": "adversary_access", "scan": "adversary_scan", "prev": "previous_action"}


@dataclass(frozen=True)
class FeatureMask:
    adversary_access: bool = False
    adversary_scan: bool = False
    previous_action: bool = False

    @classmethod
    def parse(cls, spec: str) -> "FeatureMask":
        """``"access+scan"`` style; empty string or ``"none"`` is the identity mask."""
        flags = {}
        for part in spec.replace(" ", "").split("+"):
            if part in ("", "none"):
                continue
            try:
                flags[MASK_GROUPS[part]] = True
            except KeyError:
                raise ValueError(f"unknown mask group {part!r}; choose from {sorted(MASK_GROUPS)}") from None
        return cls(**flags)

    @property
    def name(self) -> str:
        parts = [short for short, attr in MASK_GROUPS.items() if getattr(self, attr)]
        return "+".join(parts) or "none"

    @property
    def is_identity(self) -> bool:
        return not (self.adversary_access or self.adversary_scan or self.previous_action)

    def to_dict(self) -> dict:
        return asdict(self)


def ablate(obs: BlueObservation, mask: FeatureMask) -> BlueObservation:
    """Zero the masked feature groups; every encoding sees the same masking."""
    if mask.is_identity:
        return obs
    n = len(obs.activity)
    return BlueObservation(
        activity=(0,) * n if mask.adversary_scan else obs.activity,
        access=(0,) * n if mask.adversary_access else obs.access,
        last_success=False if mask.previous_action else obs.last_success,
    )
