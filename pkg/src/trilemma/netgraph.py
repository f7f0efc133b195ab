"""Peer topologies, exact connectivity metrics and the decentralisation predicate.

Edge-list interchange format::

    # comment lines allowed anywhere
    <node_count> <role letters, one per node: M=miner R=relay S=spv_client>
    <u> <v> <latency_ms> <bandwidth_bytes_per_s>
    ...
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .hashing import derive_seed

MINER = "miner"
RELAY = "relay"
SPV = "spv_client"
ROLES = (MINER, RELAY, SPV)
_ROLE_LETTER = {MINER: "M", RELAY: "R", SPV: "S"}
_LETTER_ROLE = {v: k for k, v in _ROLE_LETTER.items()}

DEFAULT_LATENCY_MS = 50.0
DEFAULT_BANDWIDTH = 12_500_000.0  # 100 Mbit/s


class GraphError(ValueError):
    pass


class TooFewVertices(GraphError):
    pass


class Disconnected(GraphError):
    pass


class InvalidThreshold(GraphError):
    pass


class InvalidParams(GraphError):
    pass


@dataclass(frozen=True, order=True)
class Edge:
    u: int
    v: int
    latency_ms: float = DEFAULT_LATENCY_MS
    bandwidth: float = DEFAULT_BANDWIDTH

    def delay_ms(self, size: int) -> float:
        """Store-and-forward transfer time of ``size`` bytes over this link."""
        return self.latency_ms + 1000.0 * size / self.bandwidth


@dataclass(frozen=True)
class NetworkGraph:
    roles: tuple[str, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        roles = tuple(self.roles)
        for r in roles:
            if r not in ROLES:
                raise GraphError(f"unknown role {r!r}")
        n = len(roles)
        normalized = {}
        for e in self.edges:
            u, v = (e.u, e.v) if e.u < e.v else (e.v, e.u)
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if not (0 <= u and v < n):
                raise GraphError(f"edge ({u}, {v}) references a node outside [0, {n})")
            if (u, v) in normalized:
                raise GraphError(f"duplicate edge ({u}, {v})")
            if e.latency_ms < 0 or e.bandwidth <= 0:
                raise GraphError(f"edge ({u}, {v}) has invalid latency/bandwidth")
            normalized[(u, v)] = Edge(u, v, e.latency_ms, e.bandwidth)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "edges", tuple(normalized[k] for k in sorted(normalized)))

    @classmethod
    def from_pairs(
        cls,
        n: int,
        pairs: Iterable[tuple[int, int]],
        roles: Sequence[str] | None = None,
        latency_ms: float = DEFAULT_LATENCY_MS,
        bandwidth: float = DEFAULT_BANDWIDTH,
    ) -> "NetworkGraph":
        roles = tuple(roles) if roles is not None else (RELAY,) * n
        return cls(roles, tuple(Edge(u, v, latency_ms, bandwidth) for u, v in pairs))

    @property
    def n(self) -> int:
        return len(self.roles)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for e in self.edges:
            adj[e.u].append(e.v)
            adj[e.v].append(e.u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def _edge_index(self) -> dict[tuple[int, int], Edge]:
        return {(e.u, e.v): e for e in self.edges}

    def edge(self, u: int, v: int) -> Edge:
        return self._edge_index[(u, v) if u < v else (v, u)]

    def has_edge(self, u: int, v: int) -> bool:
        return ((u, v) if u < v else (v, u)) in self._edge_index

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def min_degree(self) -> int:
        return min((len(a) for a in self.adjacency), default=0)

    def nodes_with_role(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        return len(hop_distances(self, 0)) == self.n

    def without_nodes(self, removed: Iterable[int]) -> "NetworkGraph":
        """Induced subgraph on the remaining nodes, relabelled densely."""
        removed = set(removed)
        keep = [v for v in range(self.n) if v not in removed]
        relabel = {v: i for i, v in enumerate(keep)}
        edges = [
            Edge(relabel[e.u], relabel[e.v], e.latency_ms, e.bandwidth)
            for e in self.edges
            if e.u in relabel and e.v in relabel
        ]
        return NetworkGraph(tuple(self.roles[v] for v in keep), tuple(edges))

    # -- interchange -----------------------------------------------------------

    def to_edge_list(self) -> str:
        letters = "".join(_ROLE_LETTER[r] for r in self.roles) or "-"
        lines = ["# trilemma edge list v1", f"{self.n} {letters}"]
        lines.extend(f"{e.u} {e.v} {e.latency_ms!r} {e.bandwidth!r}" for e in self.edges)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str) -> "NetworkGraph":
        header = None
        edges = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            try:
                if header is None:
                    if len(fields) != 2:
                        raise ValueError("header must be '<node_count> <role letters>'")
                    n = int(fields[0])
                    letters = "" if fields[1] == "-" else fields[1]
                    if len(letters) != n:
                        raise ValueError(f"expected {n} role letters, got {len(letters)}")
                    header = tuple(_LETTER_ROLE[c] for c in letters)
                else:
                    if len(fields) != 4:
                        raise ValueError("edge line must be '<u> <v> <latency_ms> <bandwidth>'")
                    edges.append(Edge(int(fields[0]), int(fields[1]), float(fields[2]), float(fields[3])))
            except (ValueError, KeyError) as exc:
                raise GraphError(f"line {lineno}: {exc}") from exc
        if header is None:
            raise GraphError("missing header line")
        return cls(header, tuple(edges))


def hop_distances(g: NetworkGraph, source: int) -> dict[int, int]:
    """BFS hop distance from ``source`` to every reachable node."""
    dist = {source: 0}
    queue = deque([source])
    adj = g.adjacency
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in adj[u]:
            if v not in dist:
                dist[v] = du
                queue.append(v)
    return dist


# -- unit-capacity max flow ------------------------------------------------------


class _UnitFlowNetwork:
    """Residual network with paired arcs ``a`` / ``a ^ 1``; augments one unit
    per BFS path, which is exact when every capacity is 1."""

    def __init__(self, n_nodes: int) -> None:
        self.adj: list[list[int]] = [[] for _ in range(n_nodes)]
        self.to: list[int] = []
        self.cap: list[int] = []

    def add_arc(self, u: int, v: int, cap: int, rev_cap: int = 0) -> None:
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap)
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(rev_cap)

    def max_flow(self, s: int, t: int, cutoff: int) -> int:
        cap = list(self.cap)
        to, adj = self.to, self.adj
        n = len(adj)
        flow = 0
        while flow < cutoff:
            parent = [-1] * n
            parent[s] = -2
            queue = deque([s])
            reached = False
            while queue and not reached:
                u = queue.popleft()
                for a in adj[u]:
                    if cap[a] > 0:
                        v = to[a]
                        if parent[v] == -1:
                            parent[v] = a
                            if v == t:
                                reached = True
                                break
                            queue.append(v)
            if not reached:
                break
            v = t
            while v != s:
                a = parent[v]
                cap[a] -= 1
                cap[a ^ 1] += 1
                v = to[a ^ 1]
            flow += 1
        return flow


def _edge_network(g: NetworkGraph) -> _UnitFlowNetwork:
    net = _UnitFlowNetwork(g.n)
    for e in g.edges:
        net.add_arc(e.u, e.v, 1, 1)
    return net


def _split_network(g: NetworkGraph) -> _UnitFlowNetwork:
    # node v -> v_in = 2v, v_out = 2v + 1
    net = _UnitFlowNetwork(2 * g.n)
    for v in range(g.n):
        net.add_arc(2 * v, 2 * v + 1, 1)
    for e in g.edges:
        net.add_arc(2 * e.u + 1, 2 * e.v, 1)
        net.add_arc(2 * e.v + 1, 2 * e.u, 1)
    return net


def local_edge_connectivity(g: NetworkGraph, s: int, t: int) -> int:
    """Maximum number of edge-disjoint s-t paths."""
    return _edge_network(g).max_flow(s, t, len(g.edges))


def local_vertex_connectivity(g: NetworkGraph, s: int, t: int) -> int:
    """Maximum number of internally vertex-disjoint paths between non-adjacent s, t."""
    if s == t or g.has_edge(s, t):
        raise GraphError("local vertex connectivity needs distinct non-adjacent endpoints")
    return _split_network(g).max_flow(2 * s + 1, 2 * t, g.n)


def edge_connectivity(g: NetworkGraph) -> int:
    """Exact lambda(G): min over t of the unit-capacity max flow from node 0 to t."""
    if g.n < 2:
        raise TooFewVertices("edge connectivity needs at least 2 vertices")
    if not g.is_connected():
        return 0
    net = _edge_network(g)
    best = g.min_degree()
    for t in range(1, g.n):
        best = min(best, net.max_flow(0, t, best))
        if best == 0:
            break
    return best


def vertex_connectivity(g: NetworkGraph) -> int:
    """Exact kappa(G), with kappa(K_n) = n - 1.

    Uses the Esfahanian-Hakimi reduction of the non-adjacent pair set: with v a
    minimum-degree vertex, some minimum separator either misses v (so it
    separates v from a non-neighbour) or contains v (so it separates two
    non-adjacent neighbours of v).
    """
    n = g.n
    if n < 2:
        raise TooFewVertices("vertex connectivity needs at least 2 vertices")
    if not g.is_connected():
        return 0
    if len(g.edges) == n * (n - 1) // 2:
        return n - 1
    net = _split_network(g)
    adj = g.adjacency
    v = min(range(n), key=lambda x: (len(adj[x]), x))
    best = len(adj[v])
    neighbours = set(adj[v])
    for w in range(n):
        if w != v and w not in neighbours:
            best = min(best, net.max_flow(2 * v + 1, 2 * w, best))
    for x, y in combinations(adj[v], 2):
        if not g.has_edge(x, y):
            best = min(best, net.max_flow(2 * x + 1, 2 * y, best))
    return best


def mean_shortest_path(g: NetworkGraph) -> Fraction:
    """Exact mean hop distance over ordered pairs u != v (0 for a single node)."""
    n = g.n
    if n < 2:
        return Fraction(0)
    total = 0
    for s in range(n):
        dist = hop_distances(g, s)
        if len(dist) != n:
            raise Disconnected("mean shortest path is undefined on a disconnected graph")
        total += sum(dist.values())
    return Fraction(total, n * (n - 1))


def diameter(g: NetworkGraph) -> int:
    best = 0
    for s in range(g.n):
        dist = hop_distances(g, s)
        if len(dist) != g.n:
            raise Disconnected("diameter is undefined on a disconnected graph")
        best = max(best, max(dist.values()))
    return best


@dataclass(frozen=True)
class ConnectivityReport:
    kappa: int
    lambda_: int
    min_degree: int
    mean_path: Fraction | float
    diameter: int | float

    def as_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "lambda": self.lambda_,
            "min_degree": self.min_degree,
            "mean_path": float(self.mean_path),
            "mean_path_exact": str(self.mean_path),
            "diameter": self.diameter,
        }


def connectivity_report(g: NetworkGraph) -> ConnectivityReport:
    if not g.is_connected():
        return ConnectivityReport(0, 0, g.min_degree(), math.inf, math.inf)
    return ConnectivityReport(
        kappa=vertex_connectivity(g),
        lambda_=edge_connectivity(g),
        min_degree=g.min_degree(),
        mean_path=mean_shortest_path(g),
        diameter=diameter(g),
    )


@dataclass(frozen=True)
class S3Report:
    holds: bool
    report: ConnectivityReport
    k: int
    l: int
    D: float

    def as_dict(self) -> dict:
        return {"holds": self.holds, "k": self.k, "l": self.l, "D": self.D, **self.report.as_dict()}


def evaluate_S3(g: NetworkGraph, k: int, l: int, D: float) -> S3Report:
    """kappa >= k, lambda >= l and mean path <= D, with k, l > 1 required."""
    if k <= 1 or l <= 1:
        raise InvalidThreshold("connectivity thresholds k and l must exceed 1")
    report = connectivity_report(g)
    holds = report.kappa >= k and report.lambda_ >= l and report.mean_path <= D
    return S3Report(holds, report, k, l, D)


# -- generators ------------------------------------------------------------------

TOPOLOGY_KINDS = ("ring", "path", "star", "tree", "grid", "complete", "random_regular", "baran_lattice")


def baran_offsets(redundancy: int) -> list[tuple[int, int]]:
    """Lattice offsets whose squared length is among the ``redundancy`` smallest
    non-zero values (1: grid, 2: adds diagonals, 3: adds straight 2-hops, ...)."""
    if redundancy < 1:
        raise InvalidParams("redundancy must be >= 1")
    reach = redundancy + 1
    lengths = sorted({dx * dx + dy * dy for dx in range(-reach, reach + 1) for dy in range(-reach, reach + 1)} - {0})
    allowed = set(lengths[:redundancy])
    return [
        (dx, dy)
        for dx in range(-reach, reach + 1)
        for dy in range(-reach, reach + 1)
        if dx * dx + dy * dy in allowed and (dx, dy) > (0, 0)
    ]


def _grid_pairs(rows: int, cols: int, offsets: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    pairs = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in offsets:
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < rows and 0 <= c2 < cols:
                    pairs.append((r * cols + c, r2 * cols + c2))
    return pairs


def _random_regular_pairs(n: int, degree: int, rng: random.Random, connected: bool) -> list[tuple[int, int]]:
    for _ in range(10_000):
        points = [v for v in range(n) for _ in range(degree)]
        rng.shuffle(points)
        pairs = set()
        ok = True
        for a, b in zip(points[::2], points[1::2]):
            key = (a, b) if a < b else (b, a)
            if a == b or key in pairs:
                ok = False
                break
            pairs.add(key)
        if not ok:
            continue
        out = sorted(pairs)
        if connected and not NetworkGraph.from_pairs(n, out).is_connected():
            continue
        return out
    raise InvalidParams(f"could not sample a simple {degree}-regular graph on {n} nodes")


def _int_param(params: Mapping, name: str, minimum: int, default: int | None = None) -> int:
    if name not in params and default is None:
        raise InvalidParams(f"missing parameter {name!r}")
    value = params.get(name, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise InvalidParams(f"parameter {name!r} must be an integer >= {minimum}, got {value!r}")
    return value


def generate_topology(kind: str, params: Mapping | None = None, seed: int = 0) -> NetworkGraph:
    """Deterministic topology for ``(kind, params, seed)``.

    Common params: ``miner_fraction``, ``spv_fraction`` (role proportions, the
    rest are relays), ``latency_ms`` or ``latency_range: [lo, hi]``, and
    ``bandwidth`` (bytes/s).
    """
    params = dict(params or {})
    if kind == "ring":
        n = _int_param(params, "n", 3)
        pairs = [(i, (i + 1) % n) for i in range(n)]
    elif kind == "path":
        n = _int_param(params, "n", 1)
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        leaves = _int_param(params, "leaves", 1)
        n = leaves + 1
        pairs = [(0, i) for i in range(1, n)]
    elif kind == "tree":
        n = _int_param(params, "n", 1)
        b = _int_param(params, "branching", 1, 2)
        pairs = [((i - 1) // b, i) for i in range(1, n)]
    elif kind == "grid":
        rows = _int_param(params, "rows", 1)
        cols = _int_param(params, "cols", 1)
        n = rows * cols
        pairs = _grid_pairs(rows, cols, [(0, 1), (1, 0)])
    elif kind == "complete":
        n = _int_param(params, "n", 1)
        pairs = list(combinations(range(n), 2))
    elif kind == "random_regular":
        n = _int_param(params, "n", 2)
        d = _int_param(params, "degree", 1)
        if d >= n or (n * d) % 2:
            raise InvalidParams("random_regular needs degree < n and n * degree even")
        rng = random.Random(derive_seed(seed, "random_regular"))
        pairs = _random_regular_pairs(n, d, rng, bool(params.get("connected", True)))
    elif kind == "baran_lattice":
        rows = _int_param(params, "rows", 1)
        cols = _int_param(params, "cols", 1)
        r = _int_param(params, "redundancy", 1, 1)
        n = rows * cols
        pairs = _grid_pairs(rows, cols, baran_offsets(r))
    else:
        raise InvalidParams(f"unknown topology kind {kind!r}")

    miner_frac = float(params.get("miner_fraction", 0.0))
    spv_frac = float(params.get("spv_fraction", 0.0))
    if miner_frac < 0 or spv_frac < 0 or miner_frac + spv_frac > 1:
        raise InvalidParams("role fractions must be non-negative and sum to at most 1")
    order = list(range(n))
    random.Random(derive_seed(seed, "roles")).shuffle(order)
    n_miners = round(n * miner_frac)
    if miner_frac > 0 and n_miners == 0:
        n_miners = 1
    n_spv = min(round(n * spv_frac), n - n_miners)
    roles = [RELAY] * n
    for v in order[:n_miners]:
        roles[v] = MINER
    for v in order[n_miners:n_miners + n_spv]:
        roles[v] = SPV

    bandwidth = float(params.get("bandwidth", DEFAULT_BANDWIDTH))
    if "latency_range" in params:
        lo, hi = (float(x) for x in params["latency_range"])
        lat_rng = random.Random(derive_seed(seed, "latency"))
        latencies = [lat_rng.uniform(lo, hi) for _ in pairs]
    else:
        latencies = [float(params.get("latency_ms", DEFAULT_LATENCY_MS))] * len(pairs)
    edges = tuple(Edge(u, v, lat, bandwidth) for (u, v), lat in zip(pairs, latencies))
    try:
        return NetworkGraph(tuple(roles), edges)
    except GraphError as exc:
        raise InvalidParams(str(exc)) from exc
