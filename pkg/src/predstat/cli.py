"""Command-line front door.

Subcommands: gen-bench, fit, eval, taxonomize, report-ts. Flags mirror
config keys one-to-one; ``--config FILE`` (JSON) supplies defaults and
explicit flags win. Every run directory receives the frozen configuration
actually used, so oracle/mock runs replay byte-for-byte.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .benchgen import (
    BenchmarkError,
    default_world,
    gen_classification,
    gen_clustering,
    gen_timeseries,
    load_predicates,
    save_instance,
)
from .corpus import load_corpus, load_embeddings
from .evaluation import (
    LlmJudge,
    WordOverlapJudge,
    build_report,
    paired_one_sided_ttest,
    shuffle_band,
    smoothed_frequency,
)
from .gateway import Gateway, GatewayConfig, HttpProvider
from .grounding import DenotationCache, Grounder, LlmBackend, OracleBackend
from .learner import FitConfig, FitResult, fit, taxonomize
from .models import GdConfig
from .proposer import LlmProposer, OracleProposer

logger = logging.getLogger(__name__)


def _parse_seeds(spec: str) -> list[int]:
    """"0..4" or "0,1,2" or "3" -> list of ints."""
    spec = spec.strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s.strip()]


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _gateway(args) -> Gateway:
    provider = HttpProvider(args.llm_base_url, api_key_env=args.api_key_env)
    config = GatewayConfig(
        model=args.llm_model,
        rpm=args.llm_rpm,
        max_parallel=args.llm_parallel,
        audit_path=Path(args.out) / "audit.jsonl" if args.out else None,
    )
    return Gateway(provider, config)


def _make_backends(args):
    cache_path = args.cache or (Path(args.out) / "denotations.jsonl" if args.out else None)
    cache = DenotationCache(cache_path)
    if args.backend == "oracle":
        grounder = Grounder(OracleBackend(), cache)
        if not args.vocab:
            raise SystemExit("--vocab is required with the oracle backend")
        proposer = OracleProposer(load_predicates(args.vocab))
    else:
        gateway = _gateway(args)
        grounder = Grounder(LlmBackend(gateway), cache, max_parallel=args.llm_parallel)
        proposer = LlmProposer(gateway)
    return grounder, proposer


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["oracle", "llm"], default="oracle")
    p.add_argument("--vocab", help="vocabulary JSONL for the oracle proposer")
    p.add_argument("--cache", help="denotation cache path (default: OUT/denotations.jsonl)")
    p.add_argument("--llm-base-url", default="https://api.openai.com/v1")
    p.add_argument("--llm-model", default="gpt-4o-mini")
    p.add_argument("--llm-rpm", type=int, default=300)
    p.add_argument("--llm-parallel", type=int, default=4)
    p.add_argument("--api-key-env", default="PREDSTAT_API_KEY")


def _fit_config(args, seed: int) -> FitConfig:
    return FitConfig(
        k=args.k,
        s=args.s,
        tau=args.tau,
        lam=args.lam,
        ridge=args.ridge,
        ablation=args.ablation,
        seed=seed,
        steering=args.steering,
        m=args.m,
        proposer_samples=args.proposer_samples,
        alternations=args.alternations,
        gd=GdConfig(max_steps=args.gd_max_steps),
    )


# --- subcommands -------------------------------------------------------------


def cmd_gen_bench(args) -> int:
    world = default_world(args.tags_per_group)
    if args.kind == "clustering":
        instance = gen_clustering(
            world, args.k, args.n, args.seed, noise_scale=args.noise
        )
    elif args.kind == "classification":
        instance = gen_classification(
            world, args.classes, args.n, args.seed, noise_scale=args.noise
        )
    elif args.kind == "timeseries":
        instance = gen_timeseries(
            world, args.T, args.seed, args.mode, noise_scale=args.noise
        )
    else:  # pragma: no cover - argparse restricts choices
        raise SystemExit(f"unknown kind {args.kind!r}")
    paths = save_instance(instance, args.out)
    print(f"wrote {len(instance.corpus)} samples to {paths['corpus'].parent}")
    return 0


def cmd_fit(args) -> int:
    corpus = load_corpus(args.corpus, args.model)
    embeddings = load_embeddings(args.embeddings, corpus)
    grounder, proposer = _make_backends(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _parse_seeds(args.seeds)
    snapshot = {
        "model": args.model,
        "seeds": seeds,
        "config": dataclasses.asdict(_fit_config(args, seeds[0])),
        "backend": args.backend,
    }
    _write_json(out / "config_snapshot.json", snapshot)
    failures = 0
    for seed in seeds:
        config = _fit_config(args, seed)
        try:
            result = fit(corpus, embeddings, args.model, config, grounder, proposer)
        except Exception as exc:
            logging.error("seed %d failed: %s", seed, exc)
            failures += 1
            continue
        with open(out / f"result_seed{seed}.json", "w", encoding="utf-8") as fh:
            fh.write(result.to_json() + "\n")
        with open(out / f"trace_seed{seed}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "fitness"])
            for i, value in enumerate(result.fitness_trace):
                writer.writerow([i, repr(float(value))])
        print(f"seed {seed}: fitness {result.fitness_trace[-1]:.6f} "
              f"({len(result.predicates)} predicates)")
    return 1 if failures else 0


def _judge(args):
    if args.judge == "mock":
        return WordOverlapJudge()
    return LlmJudge(_gateway(args))


def cmd_eval(args) -> int:
    kind = args.model
    corpus = load_corpus(args.corpus, kind)
    grounder, _ = _make_backends(args)
    references = load_predicates(args.references)
    ref_vectors = [grounder.denote_all(p, corpus) for p in references]
    judge = _judge(args)

    fit_paths = sorted(Path(args.fit_dir).glob("result_seed*.json"))
    if not fit_paths:
        raise SystemExit(f"no result_seed*.json under {args.fit_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for path in fit_paths:
        result = FitResult.from_dict(json.loads(path.read_text()))
        learned_vectors = [grounder.denote_all(p, corpus) for p in result.predicates]
        seed = int(result.provenance.get("seed", 0))
        reports.append(
            build_report(
                result.predicates, learned_vectors, references, ref_vectors, judge, seed
            )
        )
    aggregate = {
        "per_seed": [r.to_dict() for r in reports],
        "mean_f1": sum(r.mean_f1 for r in reports) / len(reports),
        "mean_surface": sum(r.mean_surface for r in reports) / len(reports),
        "seeds": [r.seed for r in reports],
    }
    if args.compare:
        other = json.loads(Path(args.compare).read_text())
        ours = [r.mean_f1 for r in reports]
        theirs = [s["mean_f1"] for s in other["per_seed"]]
        if len(ours) != len(theirs):
            raise SystemExit("--compare needs reports over the same seed count")
        t, p = paired_one_sided_ttest(ours, theirs)
        aggregate["compare"] = {
            "against": str(args.compare),
            "t": t,
            "p_one_sided": p,
            "alternative": "this_report_mean_f1_greater",
        }
        print(f"paired one-sided t-test: t={t:.4f} p={p:.6g}")
    _write_json(out / "report.json", aggregate)
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "learned", "reference", "overlap", "f1", "surface"])
        for r in reports:
            for pair in r.pairs:
                writer.writerow(
                    [r.seed, pair["learned"], pair["reference"], pair["overlap"],
                     repr(pair["f1"]), repr(pair["surface"])]
                )
    print(f"mean F1 {aggregate['mean_f1']:.4f}  mean surface {aggregate['mean_surface']:.4f}")
    return 0


def _render_markdown(node, depth=0) -> list[str]:
    lines = []
    if depth == 0:
        lines.append(f"# Taxonomy ({node.size} samples)")
    for child in node.children:
        lines.append(f"{'  ' * depth}- **{child.label}** ({child.size})")
        lines.extend(_render_markdown(child, depth + 1))
    return lines


def cmd_taxonomize(args) -> int:
    corpus = load_corpus(args.corpus, "clustering")
    embeddings = load_embeddings(args.embeddings, corpus)
    grounder, proposer = _make_backends(args)
    config = _fit_config(args, args.seed)
    tree = taxonomize(
        corpus,
        embeddings,
        config,
        grounder,
        proposer,
        min_cluster=args.min_cluster,
        depth=args.depth,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "taxonomy.json", tree.to_dict())
    (out / "taxonomy.md").write_text("\n".join(_render_markdown(tree)) + "\n", encoding="utf-8")
    print(f"taxonomy with {len(tree.children)} top-level nodes written to {out}")
    return 0


def cmd_report_ts(args) -> int:
    corpus = load_corpus(args.corpus, "timeseries")
    grounder, _ = _make_backends(args)
    result = FitResult.from_dict(json.loads(Path(args.fit).read_text()))
    order = corpus.time_order()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, predicate in enumerate(result.predicates):
        bits = grounder.denote_all(predicate, corpus).values[order]
        curve = smoothed_frequency(bits)
        low, high = shuffle_band(bits, runs=args.runs, seed=args.band_seed)
        with open(out / f"freq_pred{k}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "f", "band_low", "band_high"])
            for t in range(curve.size):
                writer.writerow(
                    [t + 1, repr(float(curve[t])), repr(float(low[t])), repr(float(high[t]))]
                )
    print(f"wrote {len(result.predicates)} frequency curves to {out}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predstat",
        description="Fit, evaluate, and benchmark statistical models whose "
        "parameters are natural-language predicates.",
    )
    parser.add_argument("--config", help="JSON file of flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-bench", help="generate a synthetic benchmark instance")
    g.add_argument("--kind", choices=["clustering", "timeseries", "classification"], required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k", type=int, default=4, help="clusters (clustering)")
    g.add_argument("--n", type=int, default=512, help="samples (clustering/classification)")
    g.add_argument("--T", type=int, default=256, help="time steps (timeseries)")
    g.add_argument("--mode", choices=["topic", "lang", "locat", "all"], default="all")
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--tags-per-group", type=int, default=4)
    g.add_argument("--noise", type=float, default=0.1)
    g.set_defaults(func=cmd_gen_bench)

    f = sub.add_parser("fit", help="fit a model over a corpus")
    f.add_argument("--corpus", required=True)
    f.add_argument("--embeddings", required=True)
    f.add_argument("--model", choices=["clustering", "timeseries", "classification"], required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--k", type=int, required=True)
    f.add_argument("--s", type=int, default=10)
    f.add_argument("--seeds", default="0", help='"0..4", "0,3,7", or a single seed')
    f.add_argument("--tau", type=float, default=10.0)
    f.add_argument("--lam", type=float, default=1.0)
    f.add_argument("--ridge", type=float, default=1e-3)
    f.add_argument("--ablation", choices=["none", "no_relax", "no_refine", "prompting", "shuffled"], default="none")
    f.add_argument("--steering")
    f.add_argument("--m", type=int, default=5)
    f.add_argument("--proposer-samples", type=int, default=128)
    f.add_argument("--alternations", type=int, default=10)
    f.add_argument("--gd-max-steps", type=int, default=2000)
    _add_backend_flags(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score fit results against references")
    e.add_argument("--fit-dir", required=True, help="directory of result_seed*.json")
    e.add_argument("--references", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--model", choices=["clustering", "timeseries", "classification"], required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--judge", choices=["mock", "llm"], default="mock")
    e.add_argument("--compare", help="another report.json; adds a paired one-sided t-test")
    _add_backend_flags(e)
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("taxonomize", help="recursive clustering into a taxonomy")
    t.add_argument("--corpus", required=True)
    t.add_argument("--embeddings", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--k", type=int, default=4)
    t.add_argument("--s", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--depth", type=int, default=2)
    t.add_argument("--min-cluster", type=int, default=32)
    t.add_argument("--tau", type=float, default=10.0)
    t.add_argument("--lam", type=float, default=1.0)
    t.add_argument("--ridge", type=float, default=1e-3)
    t.add_argument("--ablation", choices=["none"], default="none")
    t.add_argument("--steering")
    t.add_argument("--m", type=int, default=5)
    t.add_argument("--proposer-samples", type=int, default=128)
    t.add_argument("--alternations", type=int, default=10)
    t.add_argument("--gd-max-steps", type=int, default=2000)
    _add_backend_flags(t)
    t.set_defaults(func=cmd_taxonomize)

    r = sub.add_parser("report-ts", help="frequency curves with shuffle bands")
    r.add_argument("--fit", required=True, help="one result_seed*.json")
    r.add_argument("--corpus", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--runs", type=int, default=100)
    r.add_argument("--band-seed", type=int, default=0)
    _add_backend_flags(r)
    r.set_defaults(func=cmd_report_ts)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # --config supplies defaults; explicit flags override them
    probe, _ = parser.parse_known_args(argv)
    if probe.config:
        with open(probe.config, encoding="utf-8") as fh:
            defaults = json.load(fh)
        for action in parser._subparsers._group_actions:
            for sub_parser in action.choices.values():
                known = {a.dest for a in sub_parser._actions}
                sub_parser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (BenchmarkError, FileNotFoundError) as exc:
        parser.exit(2, f"error: {exc}\n")


if __name__ == "__main__":
    raise SystemExit(main())
