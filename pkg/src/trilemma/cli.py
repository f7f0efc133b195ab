"""Command-line entry point.

Scenario files are JSON objects with ``schema_version`` (currently 1), an
optional ``seeds`` list and ``output`` object (``dir``, ``stem``), and exactly
one experiment stanza: ``trilemma``, ``propagation``, ``graph_metrics`` or
``causal_chain``. Bundled scenarios are addressed as ``bundled:<name>``.

Exit status: 0 on completion, 1 on runtime failure, 2 on configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from . import __version__
from .harness import (
    SCHEMA_VERSION,
    ConfigError,
    ProtocolConfig,
    _jsonable,
    causal_chain_experiment,
    counterexample_config,
    doubling_ratios,
    evaluate_trilemma,
)
from .hashing import derive_seed
from .merkle import format_vectors, generate_vectors, check_vectors, parse_vectors
from .netgraph import GraphError, NetworkGraph, evaluate_S3, connectivity_report, generate_topology
from .propagation import CompactRelay, Message, Multicast, UnicastGossip, simulate_propagation

STANZAS = {
    "trilemma": "trilemma",
    "propagate": "propagation",
    "graph-metrics": "graph_metrics",
    "causal-chain": "causal_chain",
}


class ScenarioError(Exception):
    """Configuration problem; reported with exit status 2."""


def _locate(text: str, field: str) -> int | None:
    """Best-effort line number of a dotted field path in the scenario text."""
    pos, line = 0, None
    for key in field.split("."):
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            break
        pos = hit + 1
        line = text.count("\n", 0, hit) + 1
    return line


def _read_scenario(ref: str) -> tuple[dict, Path, str]:
    if ref.startswith("bundled:"):
        name = ref.split(":", 1)[1]
        res = resources.files("trilemma.scenarios").joinpath(f"{name}.json")
        if not res.is_file():
            raise ScenarioError(f"{ref}: no such bundled scenario")
        text, base = res.read_text(), Path(str(res)).parent
    else:
        path = Path(ref)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"{ref}: {exc.strerror or exc}") from exc
        base = path.parent
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{ref}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{ref}: top level must be an object")
    return data, base, text


def _check_envelope(data: dict, ref: str, stanza: str) -> None:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{ref}: schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    present = [k for k in STANZAS.values() if k in data]
    if len(present) != 1:
        raise ScenarioError(f"{ref}: exactly one experiment stanza required, found {present or 'none'}")
    if present[0] != stanza:
        raise ScenarioError(f"{ref}: subcommand expects a '{stanza}' stanza, found '{present[0]}'")
    extra = set(data) - {"schema_version", "seeds", "output", stanza}
    if extra:
        raise ScenarioError(f"{ref}: unknown top-level field(s): {', '.join(sorted(extra))}")


def _seeds(args, data: Mapping, default: tuple[int, ...] = (0,)) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    seeds = data.get("seeds", list(default))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ScenarioError("seeds: expected a non-empty list of non-negative integers")
    return seeds


def _graph_from(stanza: Mapping, base: Path, where: str, seed: int) -> NetworkGraph:
    try:
        if "edge_list" in stanza:
            return NetworkGraph.from_edge_list((base / stanza["edge_list"]).read_text())
        topo = stanza.get("topology")
        if not isinstance(topo, Mapping) or "kind" not in topo:
            raise ScenarioError(f"{where}.topology: expected an object with 'kind'")
        return generate_topology(topo["kind"], topo.get("params", {}), derive_seed(seed, "topology"))
    except OSError as exc:
        raise ScenarioError(f"{where}.edge_list: {exc}") from exc
    except GraphError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _message(stanza: Any, where: str) -> Message:
    if not isinstance(stanza, Mapping):
        raise ScenarioError(f"{where}: expected an object")
    try:
        return Message(stanza.get("kind", "full_block"), int(stanza["size"]), int(stanza.get("tx_count", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _relay(stanza: Any, where: str):
    if not isinstance(stanza, Mapping):
        raise ScenarioError(f"{where}: expected an object")
    try:
        kind = stanza.get("model")
        if kind == "unicast_gossip":
            return UnicastGossip(int(stanza.get("fanout", 8)))
        if kind == "compact_relay":
            return CompactRelay(int(stanza.get("fanout", 8)), float(stanza.get("known_tx_fraction", 1.0)))
        if kind == "multicast":
            group = stanza.get("group")
            return Multicast(None if group is None else frozenset(int(v) for v in group))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    raise ScenarioError(f"{where}.model: unknown relay model {stanza.get('model')!r}")


def _csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


# -- subcommands: each returns (json detail, csv rows) ---------------------------------


def _plan_trilemma(args, data, base, ref, text=""):
    try:
        config = ProtocolConfig.from_dict(data["trilemma"])
    except ConfigError as exc:
        line = _locate(text, exc.field)
        raise ScenarioError(f"{ref}:{line}: {exc}" if line else f"{ref}: {exc}") from exc
    seeds = [args.seed] if args.seed is not None else list(data.get("seeds", config.seeds))

    def run():
        reports = [evaluate_trilemma(config, s) for s in seeds]
        detail = {"config": config.to_dict(), "runs": [r.as_dict() for r in reports]}
        return detail, [r.summary_row() for r in reports]

    return run


def _plan_counterexample(args):
    config = counterexample_config()
    seeds = [args.seed] if args.seed is not None else list(config.seeds)

    def run():
        reports = [evaluate_trilemma(config, s) for s in seeds]
        detail = {"config": config.to_dict(), "runs": [r.as_dict() for r in reports]}
        return detail, [r.summary_row() for r in reports]

    return run


def _plan_propagate(args, data, base, ref):
    stanza = data["propagation"]
    if not isinstance(stanza, Mapping):
        raise ScenarioError(f"{ref}: propagation: expected an object")
    seeds = _seeds(args, data)
    msg = _message(stanza.get("message"), "propagation.message")
    model = _relay(stanza.get("relay"), "propagation.relay")
    source = stanza.get("source", 0)
    graphs = {s: _graph_from(stanza, base, f"{ref}: propagation", s) for s in seeds}
    for s, g in graphs.items():
        if not isinstance(source, int) or not 0 <= source < g.n:
            raise ScenarioError(f"{ref}: propagation.source: {source!r} is not a node")

    def run():
        runs, rows = [], []
        for s in seeds:
            report = simulate_propagation(graphs[s], source, msg, model, derive_seed(s, "propagation"))
            runs.append({"seed": s, **report.as_dict()})
            rows.append({"scenario": ref, "seed": s, **{k: _cell(v) for k, v in report.as_dict().items()}})
        return {"scenario": ref, "runs": runs}, rows

    return run


def _cell(v):
    return repr(v) if isinstance(v, float) else v


def _plan_graph_metrics(args, data, base, ref):
    stanza = data["graph_metrics"]
    if not isinstance(stanza, Mapping):
        raise ScenarioError(f"{ref}: graph_metrics: expected an object")
    seeds = _seeds(args, data)
    graphs = {s: _graph_from(stanza, base, f"{ref}: graph_metrics", s) for s in seeds}
    th = stanza.get("thresholds")
    if th is not None and (not isinstance(th, Mapping) or not {"k", "l", "D"} <= set(th)):
        raise ScenarioError(f"{ref}: graph_metrics.thresholds: expected an object with k, l, D")
    if th is not None and not (th["k"] > 1 and th["l"] > 1):
        raise ScenarioError(f"{ref}: graph_metrics.thresholds: k and l must exceed 1")

    def run():
        runs, rows = [], []
        for s in seeds:
            g = graphs[s]
            if th is not None:
                s3 = evaluate_S3(g, th["k"], th["l"], th["D"])
                metrics = s3.as_dict()
            else:
                metrics = connectivity_report(g).as_dict()
            entry = {"seed": s, "nodes": g.n, "edges": len(g.edges), **metrics}
            runs.append(entry)
            rows.append({"scenario": ref, **{k: _cell(v) for k, v in entry.items()}})
        return {"scenario": ref, "runs": runs}, rows

    return run


def _plan_causal_chain(args, data, base, ref):
    stanza = data["causal_chain"]
    if not isinstance(stanza, Mapping):
        raise ScenarioError(f"{ref}: causal_chain: expected an object")
    kinds = stanza.get("kinds", ["ring", "random_regular"])
    sizes = stanza.get("sizes")
    if not isinstance(sizes, list) or not sizes or sizes != sorted(sizes):
        raise ScenarioError(f"{ref}: causal_chain.sizes: expected an ascending non-empty list")
    if not isinstance(kinds, list) or not all(k in ("ring", "random_regular", "path", "complete") for k in kinds):
        raise ScenarioError(f"{ref}: causal_chain.kinds: expected a list of ring / random_regular / path / complete")
    msg = _message(stanza.get("message", {"size": 1000}), "causal_chain.message")
    model = _relay(stanza.get("relay", {"model": "unicast_gossip", "fanout": 4}), "causal_chain.relay")
    degree = stanza.get("degree", 4)
    seeds = _seeds(args, data)

    def run():
        runs, rows = [], []
        for s in seeds:
            table = causal_chain_experiment(kinds, sizes, msg, model, seed=s, degree=degree)
            ratios = {k: doubling_ratios(table, k) for k in kinds}
            runs.append({"seed": s, "rows": [r.__dict__ for r in table], "doubling_ratios": ratios})
            rows.extend({"scenario": ref, "seed": s, **{k: _cell(v) for k, v in r.__dict__.items()}} for r in table)
        return {"scenario": ref, "runs": runs}, rows

    return run


# -- driver -------------------------------------------------------------------------


def _emit(args, stem: str, detail: dict, rows: list[dict]) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_text, csv_text = _json(detail), _csv(rows)
    (out / f"{stem}.json").write_text(json_text)
    (out / f"{stem}.csv").write_text(csv_text)
    if not args.quiet:
        sys.stdout.write(json_text if args.format == "json" else csv_text)


def _merkle_vectors(args) -> int:
    if args.action == "emit":
        text = format_vectors(generate_vectors(args.seed or 0, args.max_leaves))
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "merkle_vectors.txt").write_text(text)
        if not args.quiet:
            print(f"wrote {out / 'merkle_vectors.txt'}")
        return 0
    if not args.path:
        raise ScenarioError("merkle-vectors check: a vector file path is required")
    try:
        vectors = parse_vectors(Path(args.path).read_text())
    except OSError as exc:
        raise ScenarioError(f"{args.path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"{args.path}: {exc}") from exc
    bad = check_vectors(vectors)
    if not args.quiet:
        print(f"{len(vectors) - len(bad)}/{len(vectors)} vectors match")
        for k in bad:
            print(f"mismatch: vector {k}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override scenario seeds with one seed")
    common.add_argument("--out-dir", default="out", help="directory for JSON/CSV outputs (default: out)")
    common.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format")
    common.add_argument("--quiet", action="store_true", help="write files only")

    parser = argparse.ArgumentParser(prog="trilemma", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STANZAS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("scenario", help="scenario JSON path or bundled:<name>")
    sub.add_parser("counterexample", parents=[common], help="emit the counterexample config and evaluate it")
    mv = sub.add_parser("merkle-vectors", parents=[common], help="emit or check Merkle golden vectors")
    mv.add_argument("action", choices=("emit", "check"))
    mv.add_argument("path", nargs="?", help="vector file to check")
    mv.add_argument("--max-leaves", type=int, default=16)
    return parser


PLANNERS: dict[str, Callable] = {
    "trilemma": _plan_trilemma,
    "propagate": _plan_propagate,
    "graph-metrics": _plan_graph_metrics,
    "causal-chain": _plan_causal_chain,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "merkle-vectors":
            return _merkle_vectors(args)
        if args.command == "counterexample":
            run = _plan_counterexample(args)
            stem = "counterexample"
            out = Path(args.out_dir)
            config_text = _json(counterexample_config().to_dict())
        else:
            data, base, text = _read_scenario(args.scenario)
            _check_envelope(data, args.scenario, STANZAS[args.command])
            if args.command == "trilemma":
                run = _plan_trilemma(args, data, base, args.scenario, text)
            else:
                run = PLANNERS[args.command](args, data, base, args.scenario)
            output = data.get("output", {})
            stem = output.get("stem", args.command) if isinstance(output, Mapping) else args.command
            config_text = None
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        detail, rows = run()
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if config_text is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "counterexample_config.json").write_text(config_text)
    _emit(args, stem, detail, rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
