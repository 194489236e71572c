"""Experiment runner and corpus tooling.

Subcommands:

* ``synth``      generate a synthetic corpus file
* ``stats``      corpus statistics
* ``tree-build`` build summarization trees for a corpus and report on them
* ``run``        run an experiment or a parameter sweep, emit CSV (and
                 figures when a plot directory is given)
* ``trace``      run one scenario and write the message trace

Exit codes: 0 success, 1 configuration error, 2 invariant violation
(self-check failure), 3 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor

from .corpus import CorpusError, CorpusStats, load_corpus, save_corpus, synth_corpus
from .netsim import (
    Codec,
    NetsimError,
    Placement,
    ReestablishPolicy,
    SimConfig,
    Simulation,
    brute_force_answer,
    check_reestablish,
    gen_queries,
    gen_topology,
    grow_network,
    place_streams,
    reestablish,
)
from .report import add_compression_column, render_sweep_figures, write_csv
from .sumtree import SumTreeError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario configuration


DEFAULTS = {
    "scenario": {"name": "scenario"},
    "network": {"nodes": "100", "seed": "1", "deg_min": "2", "deg_max": "10"},
    "corpus": {
        "source": "synth",
        "streams": "200",
        "attrs": "6",
        "vocab": "150",
        "zipf_s": "1.1",
        "absent_prob": "0.05",
        "seed": "1",
        "path": "",
    },
    "placement": {"mode": "random", "regions": "7", "clusters": "14", "seed": "1"},
    "policy": {
        "mode": "hash",
        "cov": "1.0",
        "alpha": "1.0",
        "c": "2",
        "d": "6",
        "b": "4",
        "b_ad": "inf",
        "b_q": "inf",
        "scv_mode": "exact",
        "trigger": "end",
        "adv_prune": "false",
        "arena": "4096",
        "hash_seed": "0",
        "rotate_hash_on_collision": "false",
        "cache_bound": "",
        "size_bound": "",
    },
    "queries": {"count": "100", "seed": "1"},
    "growth": {
        "rounds": "0",
        "rate": "0.1",
        "new_streams": "20",
        "trigger": "density_ratio",
        "threshold": "0.5",
        "period": "1",
        "new_d": "",
        "seed": "1",
    },
    "sweep": {},
    "output": {"csv": "", "plots": "", "trace": ""},
}

SWEEP_AXES = ("policy", "cov", "c", "d", "b", "nodes", "streams", "alpha", "density", "t_d", "period")


def load_spec(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    spec = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    spec.read_dict(DEFAULTS)
    if path:
        read = spec.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path!r}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not spec.has_section(section):
            spec.add_section(section)
        spec.set(section.strip(), key.strip(), value.strip())
    return spec


def _num(text: str) -> float:
    return math.inf if text.strip() in ("inf", "") else float(text)


def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _density_to_d(density: float, vocab: int, c: int) -> int:
    """Smallest tree depth whose code space holds ``vocab`` keywords at
    roughly the requested occupancy."""
    target = max(2.0, vocab / max(density, 1e-9))
    d = 1
    while (1 << c) ** d < target:
        d += 1
    return d


def build_point(spec: configparser.ConfigParser, axes: dict) -> dict:
    """Materialize one sweep point: every input a run needs, as plain data."""
    net, corp, pol, qry = spec["network"], spec["corpus"], spec["policy"], spec["queries"]
    plc, growth = spec["placement"], spec["growth"]
    point = {
        "scenario": spec["scenario"]["name"],
        "nodes": int(axes.get("nodes", net["nodes"])),
        "net_seed": int(net["seed"]),
        "deg_min": int(net["deg_min"]),
        "deg_max": int(net["deg_max"]),
        "source": corp["source"],
        "corpus_path": corp["path"],
        "streams": int(axes.get("streams", corp["streams"])),
        "attrs": int(corp["attrs"]),
        "vocab": int(corp["vocab"]),
        "zipf_s": float(corp["zipf_s"]),
        "absent_prob": float(corp["absent_prob"]),
        "corpus_seed": int(corp["seed"]),
        "placement": plc["mode"],
        "regions": int(plc["regions"]),
        "clusters": int(plc["clusters"]),
        "placement_seed": int(plc["seed"]),
        "policy": axes.get("policy", pol["mode"]),
        "cov": float(axes.get("cov", pol["cov"])),
        "alpha": float(axes.get("alpha", pol["alpha"])),
        "c": int(axes.get("c", pol["c"])),
        "b": int(axes.get("b", pol["b"])),
        "b_ad": _num(pol["b_ad"]),
        "b_q": _num(pol["b_q"]),
        "scv_mode": pol["scv_mode"],
        "trigger": pol["trigger"],
        "adv_prune": pol.getboolean("adv_prune"),
        "arena": int(pol["arena"]),
        "hash_seed": int(pol["hash_seed"]),
        "rotate": pol.getboolean("rotate_hash_on_collision"),
        "cache_bound": int(pol["cache_bound"]) if pol["cache_bound"] else None,
        "size_bound": int(pol["size_bound"]) if pol["size_bound"] else None,
        "queries": int(qry["count"]),
        "query_seed": int(qry["seed"]),
        "growth_rounds": int(growth["rounds"]),
        "growth_rate": float(growth["rate"]),
        "growth_streams": int(growth["new_streams"]),
        "growth_trigger": growth["trigger"],
        "growth_threshold": float(axes.get("t_d", growth["threshold"])),
        "growth_period": int(axes.get("period", growth["period"])),
        "growth_new_d": int(growth["new_d"]) if growth["new_d"] else None,
        "growth_seed": int(growth["seed"]),
        "density": float(axes["density"]) if "density" in axes else None,
        "t_d": float(axes.get("t_d", growth["threshold"])),
        "period": int(axes.get("period", growth["period"])),
    }
    if point["density"] is not None:
        point["d"] = _density_to_d(point["density"], point["vocab"], point["c"])
    else:
        point["d"] = int(axes.get("d", pol["d"]))
    return point


def run_point(point: dict, self_check: bool = False, trace_path: str | None = None) -> dict:
    """Execute one sweep point and return its CSV row."""
    if point["source"] == "file":
        streams = load_corpus(point["corpus_path"])
    else:
        streams = synth_corpus(
            point["streams"],
            n_attrs=point["attrs"],
            vocab_size=point["vocab"],
            zipf_s=point["zipf_s"],
            seed=point["corpus_seed"],
            absent_prob=point["absent_prob"],
        )
    cfg = SimConfig(
        policy=point["policy"],
        cov=point["cov"],
        alpha=point["alpha"],
        c=point["c"],
        d=point["d"],
        b=point["b"],
        b_ad=point["b_ad"],
        b_q=point["b_q"],
        scv_mode=point["scv_mode"],
        trigger=point["trigger"],
        size_bound=point["size_bound"],
        arena_size=point["arena"],
        cache_bound=point["cache_bound"],
        hash_seed=point["hash_seed"],
        seed=point["corpus_seed"],
        adv_prune=point["adv_prune"],
        rotate_hash_on_collision=point["rotate"],
    )
    topo = gen_topology(
        point["nodes"], point["net_seed"], deg_min=point["deg_min"], deg_max=point["deg_max"]
    )
    placement = Placement(point["placement"], point["regions"], point["clusters"])
    hosts = place_streams(streams, topo, placement, point["placement_seed"])
    queries = gen_queries(streams, point["queries"], point["query_seed"], point["alpha"], topo.n)

    trace = [] if trace_path else None
    sim = Simulation(cfg, topo, streams, hosts, trace=trace)
    sim.advertise_all()

    reestablish_cost = 0.0
    if point["growth_rounds"] > 0:
        policy = ReestablishPolicy(
            trigger=point["growth_trigger"],
            threshold=point["growth_threshold"],
            period=point["growth_period"],
            new_d=point["growth_new_d"],
        )
        for round_no in range(point["growth_rounds"]):
            extra = synth_corpus(
                point["growth_streams"],
                n_attrs=point["attrs"],
                vocab_size=point["vocab"],
                zipf_s=point["zipf_s"],
                seed=point["growth_seed"] + 1000 + round_no,
                absent_prob=point["absent_prob"],
            )
            for s in extra:
                s.stream_id = f"g{round_no}_{s.stream_id}"
            grow_network(sim, point["growth_rate"], extra, seed=point["growth_seed"] + round_no)
            if check_reestablish(sim, policy):
                reestablish_cost = reestablish(sim, policy)
        queries = gen_queries(
            sim.streams, point["queries"], point["query_seed"], point["alpha"], sim.topo.n
        )

    records = sim.run_queries(queries)
    if self_check:
        sample = records[:: max(1, len(records) // 20)]
        for rec in sample:
            if rec["found"] != rec["expected"]:
                raise InvariantViolation(
                    f"query {rec['qid']}: routed results diverge from the global scan "
                    f"(missing={sorted(rec['expected'] - rec['found'])[:5]}, "
                    f"extra={sorted(rec['found'] - rec['expected'])[:5]})"
                )
    metrics = sim.metrics()
    metrics.reestablish_cost = reestablish_cost

    if trace_path:
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(trace) + "\n")

    row = {
        "scenario": point["scenario"],
        "policy": point["policy"],
        "nodes": point["nodes"],
        "streams": len(sim.streams),
        "cov": point["cov"],
        "alpha": point["alpha"],
        "c": point["c"],
        "d": point["d"],
        "b": point["b"],
        "b_ad": point["b_ad"],
        "b_q": point["b_q"],
        "scv_mode": point["scv_mode"],
        "density": "" if point["density"] is None else point["density"],
        "placement": point["placement"],
        "t_d": point["t_d"],
        "period": point["period"],
        "seed": point["corpus_seed"],
    }
    metric_row = metrics.as_row()
    for dup in ("policy", "n_nodes", "n_streams"):
        metric_row.pop(dup, None)  # already present as axis columns
    row.update(metric_row)
    return row


class InvariantViolation(RuntimeError):
    pass


def sweep_points(spec: configparser.ConfigParser) -> list[dict]:
    sweep = spec["sweep"] if spec.has_section("sweep") else {}
    axes_lists = []
    for axis in SWEEP_AXES:
        if axis in sweep and sweep[axis]:
            axes_lists.append((axis, _parse_list(sweep[axis])))
    points = []

    def rec(i, chosen):
        if i == len(axes_lists):
            points.append(build_point(spec, dict(chosen)))
            return
        axis, values = axes_lists[i]
        for v in values:
            rec(i + 1, chosen + [(axis, v)])

    rec(0, [])
    return points


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    streams = synth_corpus(
        args.streams,
        n_attrs=args.attrs,
        vocab_size=args.vocab,
        zipf_s=args.zipf_s,
        seed=args.seed,
        absent_prob=args.absent_prob,
    )
    save_corpus(streams, args.out)
    stats = CorpusStats.of(streams)
    print(f"wrote {stats.stream_count} streams, {stats.total_keywords} descriptors to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    streams = load_corpus(args.corpus)
    stats = CorpusStats.of(streams)
    print(f"streams: {stats.stream_count}")
    print(f"attributes: {len(stats.attributes)}")
    print(f"total descriptors: {stats.total_keywords}")
    for attr in stats.attributes:
        print(f"  {attr}: {stats.unique_keywords[attr]} unique keywords")
    return EXIT_OK


def cmd_tree_build(args) -> int:
    streams = load_corpus(args.corpus)
    cfg = SimConfig(policy=args.policy, c=args.c, d=args.d, b=args.b, hash_seed=args.seed, seed=args.seed)
    codec = Codec(streams, cfg)
    colliding, total = codec.collision_counts()
    print(f"policy: {args.policy}")
    for attr in codec.attributes:
        tree = codec.trees.get(attr)
        if tree is None:
            print(f"  {attr}: raw keys, {len(codec.keywords[attr])} keywords")
            continue
        nodes = len(tree.by_code)
        leaves = sum(1 for n in tree.by_code.values() if n.value is not None)
        print(f"  {attr}: {nodes} tree nodes, {leaves} leaves")
    if args.policy == "hash":
        print(f"collisions: {colliding}/{total} keywords")
    if args.policy == "meaning":
        print(f"aliases: {codec.alias_count()}")
    if args.export:
        blob = {attr: codec.trees[attr].export() for attr in codec.trees}
        with open(args.export, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, sort_keys=True, indent=1)
        print(f"exported tree structure to {args.export}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = load_spec(args.config, args.set or [])
    points = sweep_points(spec)
    if args.seed is not None:
        for p in points:
            p["corpus_seed"] = args.seed
            p["query_seed"] = args.seed
    rows = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futs = [pool.submit(run_point, p, args.self_check) for p in points]
            rows = [f.result() for f in futs]  # submission order == axis order
    else:
        for p in points:
            rows.append(run_point(p, self_check=args.self_check))
    add_compression_column(rows)
    out = args.out or spec["output"]["csv"]
    if out:
        write_csv(rows, out)
        print(f"wrote {len(rows)} rows to {out}")
    else:
        for row in rows:
            print(row)
    plots = args.plots or spec["output"]["plots"]
    if plots:
        written = render_sweep_figures(rows, plots)
        print(f"rendered {len(written)} figures under {plots}")
    return EXIT_OK


def cmd_trace(args) -> int:
    spec = load_spec(args.config, args.set or [])
    points = sweep_points(spec)
    if len(points) != 1:
        raise ConfigError("trace runs exactly one scenario; drop the sweep axes")
    point = points[0]
    out = args.out or spec["output"]["trace"] or "trace.log"
    run_point(point, trace_path=out)
    print(f"wrote message trace to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iotdisc", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--streams", type=int, default=1000)
    p.add_argument("--attrs", type=int, default=15)
    p.add_argument("--vocab", type=int, default=400)
    p.add_argument("--zipf-s", type=float, default=1.1)
    p.add_argument("--absent-prob", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("tree-build", help="build summarization trees")
    p.add_argument("corpus")
    p.add_argument("--policy", choices=["alph", "hash", "meaning"], default="hash")
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--b", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export", help="write the debug tree structure as JSON")
    p.set_defaults(func=cmd_tree_build)

    p = sub.add_parser("run", help="run an experiment or sweep")
    p.add_argument("--config", help="scenario config file (key = value sections)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="override corpus and query seeds")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--plots", help="directory for rendered figures")
    p.add_argument("--self-check", action="store_true",
                   help="cross-validate sampled query results against the global scan")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="run one scenario and write its message trace")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, NetsimError, SumTreeError, configparser.Error) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
