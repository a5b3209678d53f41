"""Static plant network: subnets, hosts, services and firewall reachability.

The canonical network ships as ``data/topology.json``; :func:`load_topology`
reads any document in the same format.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any


class TopologyError(ValueError):
    """Raised for malformed topology documents or invalid topology queries."""


class ResolutionError(KeyError):
    """Raised when an address was not issued by the episode's address book."""


class HostKind(str, Enum):
    USER = "UserHost"
    ENTERPRISE = "EnterpriseServer"
    DEFENDER = "DefenderMachine"
    OP_HOST = "OperationalHost"
    OP_SERVER = "OperationalServer"

    @property
    def is_server(self) -> bool:
        return self is not HostKind.USER


@dataclass(frozen=True)
class ServiceSpec:
    port: int
    service: str
    exploitable: bool = False
    decoy: bool = False


@dataclass(frozen=True)
class HostSpec:
    name: str
    subnet: int
    kind: HostKind
    services: tuple[ServiceSpec, ...]
    decoy_templates: tuple[ServiceSpec, ...] = ()


@dataclass(frozen=True)
class SubnetSpec:
    id: int
    name: str
    role: str


@dataclass(frozen=True)
class Network:
    hosts: tuple[HostSpec, ...]
    subnets: tuple[SubnetSpec, ...]
    firewall_rules: frozenset[tuple[int, int]]
    foothold_host: str
    bline_route: tuple[str, ...] = ()
    _index: dict[str, int] = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {h.name: i for i, h in enumerate(self.hosts)})
        _validate(self)

    @property
    def host_names(self) -> tuple[str, ...]:
        return tuple(h.name for h in self.hosts)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise TopologyError(f"unknown host {name!r}") from None

    def host(self, name: str) -> HostSpec:
        return self.hosts[self.index(name)]

    def subnet(self, subnet_id: int) -> SubnetSpec:
        for s in self.subnets:
            if s.id == subnet_id:
                return s
        raise TopologyError(f"unknown subnet {subnet_id!r}")

    def hosts_in(self, subnet_id: int) -> list[HostSpec]:
        return [h for h in self.hosts if h.subnet == subnet_id]

    def subnet_permits(self, src_subnet: int, dst_subnet: int) -> bool:
        return (src_subnet, dst_subnet) in self.firewall_rules

    def reachable(self, src: str, dst: str) -> bool:
        return reachable(self, src, dst)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "cyber-range/topology",
            "version": 1,
            "subnets": [{"id": s.id, "name": s.name, "role": s.role} for s in self.subnets],
            "firewall": sorted([list(p) for p in self.firewall_rules]),
            "foothold": self.foothold_host,
            "bline_route": list(self.bline_route),
            "hosts": [
                {
                    "name": h.name,
                    "subnet": h.subnet,
                    "kind": h.kind.value,
                    "services": [
                        {"port": s.port, "service": s.service, "exploitable": s.exploitable}
                        for s in h.services
                    ],
                    "decoys": [{"port": s.port, "service": s.service} for s in h.decoy_templates],
                }
                for h in self.hosts
            ],
        }


def _validate(net: Network) -> None:
    names = [h.name for h in net.hosts]
    if len(set(names)) != len(names):
        raise TopologyError("duplicate host names")
    subnet_ids = {s.id for s in net.subnets}
    for h in net.hosts:
        if h.subnet not in subnet_ids:
            raise TopologyError(f"{h.name}: unknown subnet {h.subnet}")
        if not h.services:
            raise TopologyError(f"{h.name}: host exposes no services")
        ports = [s.port for s in h.services]
        if len(set(ports)) != len(ports):
            raise TopologyError(f"{h.name}: duplicate service ports")
        if {d.port for d in h.decoy_templates} & set(ports):
            raise TopologyError(f"{h.name}: decoy port collides with a real service")
    for src, dst in net.firewall_rules:
        if src not in subnet_ids or dst not in subnet_ids:
            raise TopologyError(f"firewall rule {src}->{dst} names an unknown subnet")
    if net.foothold_host not in names:
        raise TopologyError(f"foothold {net.foothold_host!r} is not a host")
    if net.hosts[names.index(net.foothold_host)].kind is not HostKind.USER:
        raise TopologyError("foothold must be a user host")
    for name in net.bline_route:
        if name not in names:
            raise TopologyError(f"bline_route names unknown host {name!r}")


def reachable(net: Network, src: str, dst: str) -> bool:
    """True iff ``src`` may open a connection to ``dst``.

    The firewall must permit the subnet pair, and the operational server
    only accepts connections from operational hosts (or itself).
    """
    s, d = net.host(src), net.host(dst)
    if src == dst:
        return True
    if not net.subnet_permits(s.subnet, d.subnet):
        return False
    if d.kind is HostKind.OP_SERVER:
        return s.kind in (HostKind.OP_HOST, HostKind.OP_SERVER)
    return True


def _service(d: dict[str, Any], decoy: bool = False) -> ServiceSpec:
    return ServiceSpec(
        port=int(d["port"]),
        service=str(d["service"]),
        exploitable=bool(d.get("exploitable", decoy)),
        decoy=decoy,
    )


def topology_from_dict(doc: dict[str, Any]) -> Network:
    if doc.get("format") != "cyber-range/topology":
        raise TopologyError("not a cyber-range topology document")
    if doc.get("version") != 1:
        raise TopologyError(f"unsupported topology version {doc.get('version')!r}")
    try:
        templates = doc.get("service_templates", {})
        decoys = doc.get("decoy_templates", {})
        hosts = []
        for h in doc["hosts"]:
            kind = HostKind(h["kind"])
            services = h.get("services", templates.get(kind.value, []))
            decoy_list = h.get("decoys", decoys.get(kind.value, []))
            hosts.append(
                HostSpec(
                    name=h["name"],
                    subnet=int(h["subnet"]),
                    kind=kind,
                    services=tuple(_service(s) for s in services),
                    decoy_templates=tuple(_service(s, decoy=True) for s in decoy_list),
                )
            )
        subnets = tuple(SubnetSpec(int(s["id"]), s["name"], s.get("role", "")) for s in doc["subnets"])
        rules = frozenset((int(a), int(b)) for a, b in doc["firewall"])
        return Network(
            hosts=tuple(hosts),
            subnets=subnets,
            firewall_rules=rules,
            foothold_host=doc["foothold"],
            bline_route=tuple(doc.get("bline_route", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, TopologyError):
            raise
        raise TopologyError(f"malformed topology document: {exc}") from exc


def load_topology(path: str | Path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return topology_from_dict(json.load(fh))


_DEFAULT: Network | None = None


def default_topology() -> Network:
    """The canonical 13-host plant network."""
    global _DEFAULT
    if _DEFAULT is None:
        text = resources.files("cyber_range").joinpath("data/topology.json").read_text("utf-8")
        _DEFAULT = topology_from_dict(json.loads(text))
    return _DEFAULT


class AddressBook:
    """Per-episode synthetic IPv4 bindings for subnets and hosts.

    Each subnet gets a random ``10.x.y.0/24`` block and each host a random
    octet inside it, so the same hostname carries different addresses in
    differently seeded episodes.
    """

    def __init__(self, net: Network, rng: random.Random):
        blocks = rng.sample(range(256 * 16), len(net.subnets))
        self._cidr: dict[int, str] = {}
        self._by_addr: dict[str, str] = {}
        self._by_host: dict[str, str] = {}
        for subnet, block in zip(net.subnets, blocks):
            prefix = f"10.{block >> 4}.{(block & 15) * 16}"
            self._cidr[subnet.id] = f"{prefix}.0/24"
            members = net.hosts_in(subnet.id)
            for host, octet in zip(members, rng.sample(range(1, 255), len(members))):
                addr = f"{prefix}.{octet}"
                self._by_addr[addr] = host.name
                self._by_host[host.name] = addr

    def addr_of(self, hostname: str) -> str:
        try:
            return self._by_host[hostname]
        except KeyError:
            raise ResolutionError(hostname) from None

    def resolve(self, addr: str) -> str:
        return resolve(self._by_addr, addr)

    def cidr_of(self, subnet_id: int) -> str:
        return self._cidr[subnet_id]

    def resolve_subnet(self, cidr: str) -> int:
        for sid, c in self._cidr.items():
            if c == cidr:
                return sid
        raise ResolutionError(cidr)

    @property
    def bindings(self) -> dict[str, str]:
        return dict(self._by_addr)

    def __contains__(self, addr: str) -> bool:
        return addr in self._by_addr


def resolve(bindings: dict[str, str], addr: str) -> str:
    try:
        return bindings[addr]
    except KeyError:
        raise ResolutionError(f"address {addr!r} was not issued this episode") from None
