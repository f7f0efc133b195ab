"""Message propagation under unicast gossip, compact block relay and multicast.

Link delay is ``latency + size / bandwidth``. Gossip and compact relay are
application-level store-and-forward; multicast is replicated by network
elements along a source-rooted shortest-path tree, which pipelines the payload
(arrival = path latency + size / bottleneck bandwidth) and charges each tree
edge once.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Iterable, Union

from .merkle import HEADER_SIZE
from .netgraph import GraphError, NetworkGraph, hop_distances

SHORT_ID_SIZE = 6
MESSAGE_KINDS = ("full_block", "compact_block", "header", "tx_batch", "short_id_request")
DEFAULT_TX_SIZE = 250
THROUGHPUT_RATIO_LIMIT = 0.1


class PropagationError(ValueError):
    pass


class UnknownSource(PropagationError):
    pass


class UnreachableTargets(PropagationError):
    pass


@dataclass(frozen=True)
class Message:
    kind: str
    size: int
    tx_count: int = 0

    def __post_init__(self) -> None:
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.size <= 0:
            raise ValueError("message size must be positive")
        if self.tx_count < 0:
            raise ValueError("tx_count must be non-negative")


@dataclass(frozen=True)
class UnicastGossip:
    fanout: int = 8

    def __post_init__(self) -> None:
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")


@dataclass(frozen=True)
class CompactRelay:
    fanout: int = 8
    known_tx_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.fanout < 1:
            raise ValueError("fanout must be >= 1")
        if not 0.0 <= self.known_tx_fraction <= 1.0:
            raise ValueError("known_tx_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class Multicast:
    group: frozenset[int] | None = None  # None: every node

    def __post_init__(self) -> None:
        if self.group is not None:
            object.__setattr__(self, "group", frozenset(self.group))


RelayModel = Union[UnicastGossip, CompactRelay, Multicast]


@dataclass(frozen=True)
class PropagationReport:
    total_volume: int
    source_egress: int
    per_node_amortised: float
    max_latency: float
    mean_latency: float
    coverage: float
    receivers: int
    reached: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# -- cost algebra ----------------------------------------------------------------


def unicast_volume(n: int, msg: Message) -> int:
    """Bytes the source sends to reach ``n`` receivers individually."""
    if n < 0:
        raise ValueError("receiver count must be non-negative")
    return n * msg.size


def unicast_link_volume(g: NetworkGraph, source: int, group: Iterable[int], msg: Message) -> int:
    """Bytes crossing links when each receiver gets its own copy along a shortest path."""
    dist = hop_distances(g, source)
    total = 0
    for v in set(group) - {source}:
        if v not in dist:
            raise UnreachableTargets(f"node {v} unreachable from {source}")
        total += dist[v] * msg.size
    return total


def compact_volume(tx_sizes: Iterable[int], known_tx_fraction: float) -> int:
    """Header-first announcement, one short id per tx, and the expected bytes of
    the unknown fraction fetched afterwards (rounded to the nearest byte)."""
    if not 0.0 <= known_tx_fraction <= 1.0:
        raise ValueError("known_tx_fraction must lie in [0, 1]")
    sizes = list(tx_sizes)
    return HEADER_SIZE + SHORT_ID_SIZE * len(sizes) + round((1.0 - known_tx_fraction) * sum(sizes))


def compact_relay_volume(block, known_tx_fraction: float) -> int:
    return compact_volume((tx.size for tx in block.transactions), known_tx_fraction)


def compact_message(msg: Message, known_tx_fraction: float) -> Message:
    """Compact form of a full-block message whose transactions average out its body."""
    if msg.kind != "full_block":
        return msg
    count = msg.tx_count or max(1, (msg.size - HEADER_SIZE) // DEFAULT_TX_SIZE)
    body = max(msg.size - HEADER_SIZE, 0)
    size = (
        HEADER_SIZE + SHORT_ID_SIZE * count + round((1.0 - known_tx_fraction) * body)
    )
    return Message("compact_block", size, count)


def multicast_tree(g: NetworkGraph, source: int, members: Iterable[int]) -> tuple[dict[int, int], set[int]]:
    """Hop-count shortest-path tree pruned to ``members``.

    Returns ``(parent, unreachable)``; a node's parent is its lowest-id
    neighbour one hop closer to the source.
    """
    dist = hop_distances(g, source)
    adj = g.adjacency
    parent: dict[int, int] = {}
    unreachable = set()
    for v in sorted(set(members) - {source}):
        if v not in dist:
            unreachable.add(v)
            continue
        while v != source and v not in parent:
            p = min(u for u in adj[v] if dist.get(u) == dist[v] - 1)
            parent[v] = p
            v = p
    return parent, unreachable


@dataclass(frozen=True)
class MulticastCost:
    rho: int
    amortised: float
    tree_volume: int
    tree_edges: int


def multicast_cost(g: NetworkGraph, group: Iterable[int], source: int, msg: Message) -> MulticastCost:
    """``rho`` is source egress: the source addresses the group once and the
    network replicates, so ``rho = |m|``. The per-link tree volume is kept
    alongside for full accounting."""
    group = frozenset(group)
    if not group:
        raise ValueError("multicast group must be non-empty")
    if not 0 <= source < g.n or any(not 0 <= v < g.n for v in group):
        raise GraphError("group and source must be nodes of the graph")
    parent, unreachable = multicast_tree(g, source, group)
    if unreachable:
        raise UnreachableTargets(f"{len(unreachable)} group members unreachable from {source}")
    rho = msg.size
    return MulticastCost(rho, rho / len(group), msg.size * len(parent), len(parent))


def bandwidth_predicate(rho: float, msg: Message, epsilon: float) -> bool:
    """``rho <= |m| * epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return rho <= msg.size * epsilon


def multicast_predicate(
    g: NetworkGraph, group: Iterable[int], msg: Message, epsilon: float = 1.0, source: int | None = None
) -> bool:
    group = frozenset(group)
    src = min(group) if source is None else source
    return bandwidth_predicate(multicast_cost(g, group, src, msg).rho, msg, epsilon)


# -- simulation --------------------------------------------------------------------


def _summarize(arrival: dict[int, float], targets: set[int], volume: int, egress: int) -> PropagationReport:
    reached = [arrival[v] for v in sorted(targets) if v in arrival]
    n = len(targets)
    return PropagationReport(
        total_volume=volume,
        source_egress=egress,
        per_node_amortised=volume / n if n else 0.0,
        max_latency=max(reached, default=0.0),
        mean_latency=sum(reached) / len(reached) if reached else 0.0,
        coverage=len(reached) / n if n else 1.0,
        receivers=n,
        reached=len(reached),
    )


def _simulate_gossip(g, source, size, fanout, extra_rtts, targets, seed) -> PropagationReport:
    rng = random.Random(seed)
    adj = g.adjacency
    arrival = {source: 0.0}
    in_flight: set[int] = set()
    volume = egress = 0
    seq = 0
    # events: (time, seq, kind, node); kind 0 = delivery, 1 = forwarding round
    events = [(0.0, 0, 1, source)]
    while events:
        t, _, kind, u = heapq.heappop(events)
        if kind == 0:
            in_flight.discard(u)
            arrival[u] = t
            seq += 1
            heapq.heappush(events, (t, seq, 1, u))
            continue
        candidates = [v for v in adj[u] if v not in arrival and v not in in_flight]
        if not candidates:
            continue
        chosen = rng.sample(candidates, min(fanout, len(candidates)))
        round_end = t
        for v in sorted(chosen):
            e = g.edge(u, v)
            done = t + e.delay_ms(size) + extra_rtts * e.latency_ms
            in_flight.add(v)
            volume += size
            if u == source:
                egress += size
            seq += 1
            heapq.heappush(events, (done, seq, 0, v))
            round_end = max(round_end, done)
        seq += 1
        heapq.heappush(events, (round_end, seq, 1, u))
    return _summarize(arrival, targets, volume, egress)


def _simulate_multicast(g, source, msg, group, targets) -> PropagationReport:
    parent, unreachable = multicast_tree(g, source, group)
    # (path latency, bottleneck bandwidth) per tree node
    path = {source: (0.0, float("inf"))}
    for v in parent:
        chain = []
        while v not in path:
            chain.append(v)
            v = parent[v]
        for w in reversed(chain):
            lat, bw = path[parent[w]]
            e = g.edge(parent[w], w)
            path[w] = (lat + e.latency_ms, min(bw, e.bandwidth))
    arrival = {v: (lat + 1000.0 * msg.size / bw if v != source else 0.0) for v, (lat, bw) in path.items()}
    reached_any = bool(parent)
    volume = msg.size * len(parent)
    egress = msg.size if reached_any else 0
    return _summarize(arrival, targets, volume, egress)


def simulate_propagation(
    g: NetworkGraph,
    source: int,
    msg: Message,
    model: RelayModel,
    seed: int = 0,
    targets: Iterable[int] | None = None,
) -> PropagationReport:
    """Event-driven dissemination of ``msg`` from ``source``.

    Gossip (and compact relay): every node, once it holds the message, sends to
    up to ``fanout`` random neighbours that neither hold it nor have it in
    flight, waits for that round to finish, and repeats until no such
    neighbour remains. Compact relay sends the compact form and, when some
    transactions are unknown, pays two extra link latencies for the short-id
    request/response. ``targets`` (default: every node but the source, or the
    multicast group) only affects coverage and latency statistics.
    """
    if not 0 <= source < g.n:
        raise UnknownSource(f"source {source} not in graph")
    if isinstance(model, Multicast):
        group = set(range(g.n)) if model.group is None else set(model.group)
        if any(not 0 <= v < g.n for v in group):
            raise GraphError("multicast group references unknown nodes")
        tgt = set(group if targets is None else targets) - {source}
        report = _simulate_multicast(g, source, msg, group | tgt, tgt)
    else:
        tgt = set(range(g.n) if targets is None else targets) - {source}
        if isinstance(model, CompactRelay):
            wire = compact_message(msg, model.known_tx_fraction)
            extra = 0 if model.known_tx_fraction >= 1.0 else 2
        elif isinstance(model, UnicastGossip):
            wire, extra = msg, 0
        else:
            raise TypeError(f"unsupported relay model {model!r}")
        report = _simulate_gossip(g, source, wire.size, model.fanout, extra, tgt, seed)
    if report.receivers and report.reached == 0:
        raise UnreachableTargets("no target reachable from the source")
    return report


@dataclass(frozen=True)
class ThroughputCheck:
    t_net: float
    ratio: float
    unconstrained: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def throughput_check(
    g: NetworkGraph,
    model: RelayModel,
    block_size: int,
    block_interval: float,
    *,
    source: int | None = None,
    seed: int = 0,
    tx_count: int = 0,
    limit: float = THROUGHPUT_RATIO_LIMIT,
) -> ThroughputCheck:
    """Propagation time of one block to every miner against the block interval
    (both in ms); unconstrained iff ``t_net / interval <= limit``."""
    if block_interval <= 0:
        raise ValueError("block interval must be positive")
    miners = [i for i, r in enumerate(g.roles) if r == "miner"] or list(range(g.n))
    src = miners[0] if source is None else source
    msg = Message("full_block", block_size, tx_count)
    report = simulate_propagation(g, src, msg, model, seed, targets=miners)
    t_net = report.max_latency if report.coverage == 1.0 else float("inf")
    ratio = t_net / block_interval
    return ThroughputCheck(t_net, ratio, ratio <= limit)
