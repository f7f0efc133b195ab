"""Protocol configurations, the scalability leg, the trilemma report, and the
latency / bandwidth scaling experiments."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .consensus import AdversaryModel, S1Report, evaluate_S1, target_for_work
from .hashing import derive_seed
from .ledger import WORKLOAD_KINDS, Workload, peak_utxo_size, validation_cost_curve
from .netgraph import (
    TOPOLOGY_KINDS,
    NetworkGraph,
    S3Report,
    evaluate_S3,
    generate_topology,
    mean_shortest_path,
)
from .propagation import (
    CompactRelay,
    Message,
    Multicast,
    RelayModel,
    UnicastGossip,
    multicast_cost,
    simulate_propagation,
    throughput_check,
    unicast_volume,
)

SCHEMA_VERSION = 1
RESIDUAL_LIMIT = 0.05
SLOPE_OVERHEAD = 1.1


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path to the offending entry."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    name: str = "custom"
    topology: Mapping[str, Any] = field(default_factory=lambda: {"kind": "ring", "params": {"n": 8}})
    relay: Mapping[str, Any] = field(default_factory=lambda: {"model": "unicast_gossip", "fanout": 8})
    partitions: int = 1
    block_interval_ms: float = 600_000.0
    block_size_policy: Mapping[str, Any] = field(default_factory=lambda: {"kind": "unbounded"})
    block_size_bytes: int = 1_000_000
    adversary: AdversaryModel = field(default_factory=lambda: AdversaryModel(0.1, 6))
    s3_thresholds: Mapping[str, float] = field(default_factory=lambda: {"k": 2, "l": 2, "D": 6.0})
    security_threshold: float = 0.01
    seeds: tuple[int, ...] = (0,)
    workload: str = "partitionable"
    n_grid: tuple[int, ...] = (1000, 2500, 5000, 7500, 10000)
    mc_trials: int = 100_000
    corpus_blocks: int = 4
    corpus_txs_per_block: int = 64
    block_work: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "n_grid", tuple(self.n_grid))

    @property
    def block_target(self) -> int:
        return target_for_work(self.block_work)

    def workload_for(self, seed: int) -> Workload:
        return Workload(self.workload, derive_seed(seed, "workload"))

    def relay_model(self, g: NetworkGraph | None = None) -> RelayModel:
        spec = dict(self.relay)
        kind = spec.get("model")
        if kind == "unicast_gossip":
            return UnicastGossip(int(spec.get("fanout", 8)))
        if kind == "compact_relay":
            return CompactRelay(int(spec.get("fanout", 8)), float(spec.get("known_tx_fraction", 1.0)))
        if kind == "multicast":
            group = spec.get("group")
            return Multicast(None if group is None else frozenset(group))
        raise ConfigError("relay.model", f"unknown relay model {kind!r}")

    def effective_block_size(self) -> int:
        if self.block_size_policy.get("kind") == "capped":
            return min(self.block_size_bytes, int(self.block_size_policy["bytes"]))
        return self.block_size_bytes

    def build_topology(self, seed: int) -> NetworkGraph:
        return generate_topology(
            self.topology["kind"], self.topology.get("params", {}), derive_seed(seed, "topology")
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["n_grid"] = list(self.n_grid)
        adv = d["adversary"]
        if math.isinf(adv["resource_bound"]):
            adv["resource_bound"] = None
        return {"schema_version": SCHEMA_VERSION, **d}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], where: str = "trilemma") -> "ProtocolConfig":
        if not isinstance(data, Mapping):
            raise ConfigError(where, "expected an object")
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{where}.schema_version", f"unsupported version {version!r}")
        known = {f for f in cls.__dataclass_fields__}
        for key in data:
            if key not in known:
                raise ConfigError(f"{where}.{key}", "unknown field")
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            path = f"{where}.{key}"
            if key == "adversary":
                kwargs[key] = _parse_adversary(value, path)
            elif key in ("seeds", "n_grid"):
                if not isinstance(value, list) or not all(_is_int(x) and x >= 0 for x in value):
                    raise ConfigError(path, "expected a list of non-negative integers")
                kwargs[key] = tuple(value)
            elif key in ("partitions", "block_size_bytes", "mc_trials", "corpus_blocks", "corpus_txs_per_block", "block_work"):
                if not _is_int(value) or value < 1:
                    raise ConfigError(path, "expected a positive integer")
                kwargs[key] = value
            elif key in ("block_interval_ms", "security_threshold"):
                if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                    raise ConfigError(path, "expected a positive number")
                kwargs[key] = float(value)
            elif key in ("topology", "relay", "block_size_policy", "s3_thresholds"):
                if not isinstance(value, Mapping):
                    raise ConfigError(path, "expected an object")
                kwargs[key] = dict(value)
            else:
                if not isinstance(value, str):
                    raise ConfigError(path, "expected a string")
                kwargs[key] = value
        config = cls(**kwargs)
        config.validate(where)
        return config

    def validate(self, where: str = "trilemma") -> None:
        """Check every sub-config against its module's preconditions."""
        _check_keys(self.topology, {"kind", "params"}, f"{where}.topology")
        _check_keys(self.relay, {"model", "fanout", "known_tx_fraction", "group"}, f"{where}.relay")
        _check_keys(self.block_size_policy, {"kind", "bytes"}, f"{where}.block_size_policy")
        _check_keys(self.s3_thresholds, {"k", "l", "D"}, f"{where}.s3_thresholds")
        for key, value in self.s3_thresholds.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{where}.s3_thresholds.{key}", "expected a number")
        if self.topology.get("kind") not in TOPOLOGY_KINDS:
            raise ConfigError(f"{where}.topology.kind", f"must be one of {', '.join(TOPOLOGY_KINDS)}")
        if not isinstance(self.topology.get("params", {}), Mapping):
            raise ConfigError(f"{where}.topology.params", "expected an object")
        try:
            self.relay_model()
        except ValueError as exc:
            raise ConfigError(f"{where}.relay", str(exc)) from exc
        policy = self.block_size_policy.get("kind")
        if policy not in ("unbounded", "capped"):
            raise ConfigError(f"{where}.block_size_policy.kind", "must be 'unbounded' or 'capped'")
        if policy == "capped" and not (_is_int(self.block_size_policy.get("bytes")) and self.block_size_policy["bytes"] > 0):
            raise ConfigError(f"{where}.block_size_policy.bytes", "capped policy needs a positive byte count")
        th = self.s3_thresholds
        for key in ("k", "l", "D"):
            if key not in th:
                raise ConfigError(f"{where}.s3_thresholds.{key}", "missing")
        if not (th["k"] > 1 and th["l"] > 1):
            raise ConfigError(f"{where}.s3_thresholds", "k and l must exceed 1")
        if th["D"] <= 0:
            raise ConfigError(f"{where}.s3_thresholds.D", "must be positive")
        if not self.seeds:
            raise ConfigError(f"{where}.seeds", "at least one seed required")
        if self.workload not in WORKLOAD_KINDS:
            raise ConfigError(f"{where}.workload", f"must be one of {', '.join(WORKLOAD_KINDS)}")
        if len(self.n_grid) < 3 or list(self.n_grid) != sorted(self.n_grid):
            raise ConfigError(f"{where}.n_grid", "needs at least 3 ascending points")
        if not 0 < self.security_threshold < 1:
            raise ConfigError(f"{where}.security_threshold", "must lie in (0, 1)")


def _check_keys(obj: Mapping, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _parse_adversary(value: Any, path: str) -> AdversaryModel:
    if not isinstance(value, Mapping):
        raise ConfigError(path, "expected an object")
    value = dict(value)
    if value.get("resource_bound") is None:
        value["resource_bound"] = math.inf
    allowed = set(AdversaryModel.__dataclass_fields__)
    for key in value:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")
        if not isinstance(value[key], (int, float)) or isinstance(value[key], bool):
            raise ConfigError(f"{path}.{key}", "expected a number")
    try:
        return AdversaryModel(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def counterexample_config() -> ProtocolConfig:
    """The constructive counterexample: redundant lattice, multicast relay,
    four validation partitions, unbounded blocks, minority adversary."""
    return ProtocolConfig(
        name="counterexample",
        topology={
            "kind": "baran_lattice",
            "params": {"rows": 16, "cols": 16, "redundancy": 3, "miner_fraction": 0.1, "spv_fraction": 0.3},
        },
        relay={"model": "multicast"},
        partitions=4,
        block_interval_ms=600_000.0,
        block_size_policy={"kind": "unbounded"},
        block_size_bytes=32_000_000,
        adversary=AdversaryModel(alpha=0.1, reorg_depth=6, resource_bound=math.inf),
        s3_thresholds={"k": 3, "l": 3, "D": 12.0},
        security_threshold=0.01,
        seeds=(7, 11, 13),
        workload="partitionable",
        n_grid=(1000, 2500, 5000, 7500, 10000),
        mc_trials=100_000,
    )


# -- scalability leg ----------------------------------------------------------------


@dataclass(frozen=True)
class S2Report:
    holds: bool
    fitted_slope: float
    intercept: float
    relative_residual: float
    slope_limit: float
    reference_per_tx: float
    per_tx_cost_curve: tuple[tuple[int, int, float], ...]
    peak_space: int
    workload: str
    partitions: int

    def as_dict(self) -> dict:
        d = asdict(self)
        d["per_tx_cost_curve"] = [list(p) for p in self.per_tx_cost_curve]
        return d


def fit_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares ``y = a x + b``; returns ``(a, b, rms residual / mean y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    mean = float(np.mean(y))
    rel = float(np.sqrt(np.mean(resid**2)) / mean) if mean else 0.0
    return float(a), float(b), rel


def evaluate_S2(config: ProtocolConfig, n_grid: Sequence[int] | None = None, seed: int | None = None) -> S2Report:
    """Fit critical-path validation cost against batch size. Holds iff the fit
    is linear (relative residual <= 5%) and the slope is within 10% of the
    single-thread per-tx cost divided by the partition count."""
    grid = list(config.n_grid if n_grid is None else n_grid)
    if len(grid) < 3 or grid != sorted(grid) or len(set(grid)) != len(grid):
        raise ValueError("n_grid needs at least 3 strictly ascending points")
    seed = config.seeds[0] if seed is None else seed
    workload = config.workload_for(seed)
    m = config.partitions
    curve = validation_cost_curve(workload, grid, m)
    reference = curve if m == 1 else validation_cost_curve(workload, grid, 1)
    n_max, ref_ops = reference[-1]
    per_tx_ref = ref_ops / n_max if n_max else 0.0
    a, b, rel = fit_line([n for n, _ in curve], [ops for _, ops in curve])
    limit = per_tx_ref * SLOPE_OVERHEAD / m
    genesis, txs = workload.generate(n_max)
    return S2Report(
        holds=rel <= RESIDUAL_LIMIT and a <= limit,
        fitted_slope=a,
        intercept=b,
        relative_residual=rel,
        slope_limit=limit,
        reference_per_tx=per_tx_ref,
        per_tx_cost_curve=tuple((n, ops, ops / n if n else 0.0) for n, ops in curve),
        peak_space=peak_utxo_size(genesis, txs),
        workload=config.workload,
        partitions=m,
    )


# -- trilemma report ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrilemmaReport:
    config_name: str
    config_hash: str
    seed: int
    s1: S1Report | None
    s2: S2Report | None
    s3: S3Report | None
    throughput: dict | None
    errors: Mapping[str, str]

    @property
    def conjunction_holds(self) -> bool:
        return all(leg is not None and leg.holds for leg in (self.s1, self.s2, self.s3))

    def as_dict(self) -> dict:
        return {
            "config_name": self.config_name,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "s1": None if self.s1 is None else {**asdict(self.s1), "notes": list(self.s1.notes)},
            "s2": None if self.s2 is None else self.s2.as_dict(),
            "s3": None if self.s3 is None else self.s3.as_dict(),
            "throughput": self.throughput,
            "errors": dict(self.errors),
            "conjunction_holds": self.conjunction_holds,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.as_dict()), sort_keys=True, indent=2) + "\n"

    def summary_row(self) -> dict:
        return {
            "config": self.config_name,
            "seed": self.seed,
            "s1_holds": _leg(self.s1),
            "s1_p_hat": "" if self.s1 is None else repr(self.s1.p_hat),
            "s2_holds": _leg(self.s2),
            "s2_slope": "" if self.s2 is None else repr(self.s2.fitted_slope),
            "s3_holds": _leg(self.s3),
            "kappa": "" if self.s3 is None else self.s3.report.kappa,
            "lambda": "" if self.s3 is None else self.s3.report.lambda_,
            "mean_path": "" if self.s3 is None else repr(float(self.s3.report.mean_path)),
            "conjunction_holds": str(self.conjunction_holds).lower(),
            "config_hash": self.config_hash,
        }


def _leg(leg) -> str:
    return "error" if leg is None else str(leg.holds).lower()


def _jsonable(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "numerator") and hasattr(x, "denominator") and not isinstance(x, int):
        return float(x)
    return x


_LEG_ERRORS = (ValueError, ArithmeticError, LookupError, RuntimeError)


def evaluate_trilemma(config: ProtocolConfig, seed: int | None = None) -> TrilemmaReport:
    """Evaluate all three predicates for one seed; a failing leg is recorded in
    ``errors`` and the report is still produced."""
    seed = config.seeds[0] if seed is None else seed
    errors: dict[str, str] = {}
    s1 = s2 = s3 = None
    throughput = None
    try:
        s1 = evaluate_S1(config, seed=seed)
    except _LEG_ERRORS as exc:
        errors["s1"] = f"{type(exc).__name__}: {exc}"
    try:
        s2 = evaluate_S2(config, seed=seed)
    except _LEG_ERRORS as exc:
        errors["s2"] = f"{type(exc).__name__}: {exc}"
    try:
        g = config.build_topology(seed)
        th = config.s3_thresholds
        s3 = evaluate_S3(g, th["k"], th["l"], th["D"])
        check = throughput_check(
            g, config.relay_model(), config.effective_block_size(), config.block_interval_ms,
            seed=derive_seed(seed, "propagation"),
        )
        throughput = check.as_dict()
    except _LEG_ERRORS as exc:
        errors["s3"] = f"{type(exc).__name__}: {exc}"
    return TrilemmaReport(config.name, config.digest(), seed, s1, s2, s3, throughput, errors)


def mutations(base: ProtocolConfig) -> dict[str, ProtocolConfig]:
    """One mutation per axis, each aimed at exactly one predicate."""
    return {
        "adversary": replace(base, name=f"{base.name}/adversary", adversary=replace(base.adversary, alpha=0.6)),
        "partitioning": replace(base, name=f"{base.name}/partitioning", workload="cross_partition"),
        "topology": replace(
            base, name=f"{base.name}/topology", topology={"kind": "star", "params": {"leaves": 255, "miner_fraction": 0.1}}
        ),
    }


# -- experiments --------------------------------------------------------------------------


@dataclass(frozen=True)
class CausalRow:
    kind: str
    n: int
    mean_latency: float
    mean_path: float


def causal_chain_experiment(
    kinds: Sequence[str],
    sizes: Sequence[int],
    msg: Message,
    model: RelayModel,
    *,
    seed: int = 0,
    degree: int = 4,
) -> list[CausalRow]:
    """Mean propagation latency and mean hop distance per (topology, size)."""
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    for kind in kinds:
        for n in sizes:
            if n == 1:
                rows.append(CausalRow(kind, 1, 0.0, 0.0))
                continue
            if kind == "ring":
                g = generate_topology("ring", {"n": n})
            elif kind == "random_regular":
                g = generate_topology("random_regular", {"n": n, "degree": degree}, derive_seed(seed, "causal", n))
            else:
                g = generate_topology(kind, {"n": n}, derive_seed(seed, "causal", n))
            report = simulate_propagation(g, 0, msg, model, derive_seed(seed, "causal-sim", n))
            rows.append(CausalRow(kind, n, report.mean_latency, float(mean_shortest_path(g))))
    return rows


def doubling_ratios(rows: Sequence[CausalRow], kind: str) -> list[float]:
    """Latency ratio between consecutive sizes of ``kind`` (n = 1 rows skipped)."""
    pts = [r for r in rows if r.kind == kind and r.n > 1]
    return [b.mean_latency / a.mean_latency for a, b in zip(pts, pts[1:])]


@dataclass(frozen=True)
class BandwidthScaling:
    sizes: tuple[int, ...]
    unicast_cost: tuple[int, ...]
    multicast_cost: tuple[int, ...]
    unicast_slope: float
    multicast_slope: float


def bandwidth_scaling(sizes: Sequence[int], msg: Message, *, seed: int = 0, degree: int = 4) -> BandwidthScaling:
    """Source-side cost of reaching n receivers, unicast vs multicast, with the
    fitted per-receiver slope of each."""
    uni, multi = [], []
    for n in sizes:
        g = generate_topology("random_regular", {"n": n + 1, "degree": degree}, derive_seed(seed, "bandwidth", n))
        uni.append(unicast_volume(n, msg))
        multi.append(multicast_cost(g, range(n + 1), 0, msg).rho)
    a_uni, _, _ = fit_line(sizes, uni)
    a_multi, _, _ = fit_line(sizes, multi)
    return BandwidthScaling(tuple(sizes), tuple(uni), tuple(multi), a_uni, a_multi)
