"""Network layout: nodes, links and static shortest-path routes to the utility.

Only the utility, collectors and meters marked as relays carry transit
traffic. The utility may only be linked to collectors, so every route from a
meter to the utility crosses exactly one collector at its upper end.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..errors import BadTopology


class NodeKind(enum.Enum):
    UTILITY = "UTILITY"
    COLLECTOR = "COLLECTOR"
    METER = "METER"


@dataclass
class NodeSpec:
    node_id: str
    kind: NodeKind
    index: int
    relay: bool = False
    legacy: bool = False


@dataclass
class Topology:
    nodes: Dict[str, NodeSpec]
    adjacency: Dict[str, List[Tuple[str, int]]]
    utility: str
    parent: Dict[str, str] = field(default_factory=dict)
    distance: Dict[str, int] = field(default_factory=dict)

    @property
    def collectors(self) -> List[str]:
        return [n for n, s in self.nodes.items() if s.kind is NodeKind.COLLECTOR]

    @property
    def meters(self) -> List[str]:
        return [n for n, s in self.nodes.items() if s.kind is NodeKind.METER]

    def delay(self, a: str, b: str) -> int:
        for nbr, d in self.adjacency[a]:
            if nbr == b:
                return d
        raise BadTopology(f"no link {a} -- {b}")

    def uplink_route(self, meter_id: str) -> List[str]:
        """Node ids from the meter up to and including the utility."""
        route = [meter_id]
        while route[-1] != self.utility:
            route.append(self.parent[route[-1]])
        return route

    def collector_of(self, node_id: str) -> str:
        for hop in self.uplink_route(node_id):
            if self.nodes[hop].kind is NodeKind.COLLECTOR:
                return hop
        raise BadTopology(f"{node_id} has no collector on its route")

    def children(self) -> Dict[str, List[str]]:
        kids: Dict[str, List[str]] = {n: [] for n in self.nodes}
        for child, par in self.parent.items():
            kids[par].append(child)
        return kids

    def remove_link(self, a: str, b: str) -> None:
        self.adjacency[a] = [(n, d) for n, d in self.adjacency[a] if n != b]
        self.adjacency[b] = [(n, d) for n, d in self.adjacency[b] if n != a]
        compute_routes(self)


def compute_routes(topo: Topology) -> None:
    """Dijkstra from the utility over transit nodes; leaves attach to the nearest one."""
    def transit(n):
        spec = topo.nodes[n]
        return spec.kind is not NodeKind.METER or spec.relay

    dist = {topo.utility: 0}
    parent: Dict[str, str] = {}
    heap = [(0, 0, topo.utility)]
    order = 1
    done = set()
    while heap:
        d, _, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nbr, delay in topo.adjacency[node]:
            nd = d + delay
            if nbr not in dist or nd < dist[nbr]:
                dist[nbr] = nd
                parent[nbr] = node
                if transit(nbr):
                    heapq.heappush(heap, (nd, order, nbr))
                    order += 1
    missing = [n for n in topo.nodes if n != topo.utility and n not in parent]
    if missing:
        raise BadTopology(f"no route to the utility from {missing[:5]}")
    topo.parent = parent
    topo.distance = dist


def build_network(config: dict) -> Topology:
    """Instantiate a topology from an explicit or generated configuration.

    Explicit form::

        {"utility": "U", "collectors": ["C1"],
         "meters": {"M1": {}, "M2": {"relay": true}, "M3": {"legacy": true}},
         "links": [["U", "C1"], ["C1", "M1"], ["C1", "M2"], ["M2", "M3", 2]]}

    Generated form: ``{"generate": {"meters": 512, "collectors": 4, "fanout": 8}}``.
    """
    if "generate" in config:
        config = tree_config(**config["generate"])
    try:
        utility = config.get("utility", "U")
        collectors = list(config["collectors"])
        meters = config["meters"]
        links = config["links"]
    except KeyError as exc:
        raise BadTopology(f"topology is missing {exc.args[0]!r}") from None
    if isinstance(meters, list):
        meters = {m: {} for m in meters}

    nodes: Dict[str, NodeSpec] = {utility: NodeSpec(utility, NodeKind.UTILITY, 0)}
    for c in collectors:
        if c in nodes:
            raise BadTopology(f"duplicate node {c}")
        nodes[c] = NodeSpec(c, NodeKind.COLLECTOR, len(nodes))
    for m, opts in meters.items():
        if m in nodes:
            raise BadTopology(f"duplicate node {m}")
        opts = opts or {}
        nodes[m] = NodeSpec(m, NodeKind.METER, len(nodes), bool(opts.get("relay")), bool(opts.get("legacy")))

    adjacency: Dict[str, List[Tuple[str, int]]] = {n: [] for n in nodes}
    for link in links:
        a, b = link[0], link[1]
        delay = int(link[2]) if len(link) > 2 else 1
        if a not in nodes or b not in nodes:
            raise BadTopology(f"link {a} -- {b} names an unknown node")
        if delay < 1:
            raise BadTopology("link delays must be at least one tick")
        kinds = {nodes[a].kind, nodes[b].kind}
        if NodeKind.UTILITY in kinds and kinds != {NodeKind.UTILITY, NodeKind.COLLECTOR}:
            raise BadTopology(f"utility may only link to collectors ({a} -- {b})")
        adjacency[a].append((b, delay))
        adjacency[b].append((a, delay))

    if not collectors:
        raise BadTopology("at least one collector is required")
    topo = Topology(nodes, adjacency, utility)
    compute_routes(topo)
    for c in collectors:
        if topo.parent[c] != utility:
            raise BadTopology(f"collector {c} has no direct link to the utility")
    return topo


def tree_config(meters: int, collectors: int = 1, fanout: Optional[int] = None) -> dict:
    """A regular tree: collectors under the utility, then meters ``fanout`` per parent.

    Meters that end up with children are marked as relays. Without a fanout
    every meter hangs directly off a collector.
    """
    cols = [f"C{i + 1}" for i in range(collectors)]
    ids = [f"M{i + 1:04d}" for i in range(meters)]
    links = [["U", c] for c in cols]
    if fanout is None:
        parents = [cols[i % collectors] for i in range(meters)]
    else:
        pool = cols + ids
        parents = [pool[i // fanout] for i in range(meters)]
    relays = set(p for p in parents if p.startswith("M"))
    links += [[p, m] for p, m in zip(parents, ids)]
    return {
        "utility": "U",
        "collectors": cols,
        "meters": {m: ({"relay": True} if m in relays else {}) for m in ids},
        "links": links,
    }
