"""Experiment command line: gen, train, eval, match, sweep.

Every command writes a run manifest before doing any computation, records
content digests of its inputs, and produces byte-identical outputs when
rerun with the same inputs and seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import as_matrix
from .pipeline import (
    MetricsReport,
    TrainConfig,
    TrainedModel,
    evaluate,
    train,
)
from .serialization import (
    canonical_json,
    dump_canonical_json,
    load_json,
    sha256_file,
)
from .sinkhorn import MarginalSpec, argmax_match, sinkhorn_normalize
from .synth import (
    OntologySpec,
    generate_benchmark,
    load_ontology,
    load_scenes,
    write_benchmark,
)
from .graphs import load_knowledge_base

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("k", "R", "alpha", "beta", "epsilon")
SWEEP_HEADER = "value,seen,unseen,harmonic"
TRAIN_LOG_HEADER = "step,l_mask,l_match,l_sp,l_cs,total"


def write_manifest(path: Path, config: dict, inputs: list[str], outputs: list[str], seed) -> str:
    """Write the run manifest and return its content digest."""
    manifest = {
        "config": config,
        "input_digests": {str(p): sha256_file(p) for p in inputs},
        "output_paths": sorted(str(o) for o in outputs),
        "seed": seed,
        "tool_version": __version__,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_canonical_json(manifest, path)
    import hashlib

    return hashlib.sha256(canonical_json(manifest).encode("utf-8")).hexdigest()


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    spec = OntologySpec.from_dict(load_json(args.spec))
    seed = args.seed if args.seed is not None else 0
    out = _out_dir(args, "benchmark")
    digest = write_manifest(
        out / "manifest.json",
        {"scenes": args.scenes, "spec": spec.to_dict()},
        [args.spec],
        [out / "ontology.json", out / "scenes.json", out / "kb.json"],
        seed,
    )
    benchmark = generate_benchmark(spec, args.scenes, seed)
    write_benchmark(benchmark, out)
    if not args.quiet:
        print(f"wrote benchmark to {out} (manifest {digest[:12]})")
    return 0


def _load_train_inputs(data_dir: str):
    data = Path(data_dir)
    scenes_path = data / "scenes.json"
    kb_path = data / "kb.json"
    ontology_path = data / "ontology.json"
    for p in (scenes_path, kb_path, ontology_path):
        if not p.exists():
            raise FileNotFoundError(f"missing data file: {p}")
    train_scenes, eval_scenes = load_scenes(scenes_path)
    kb = load_knowledge_base(kb_path)
    ontology = load_ontology(ontology_path)
    return train_scenes, eval_scenes, kb, ontology, [scenes_path, kb_path, ontology_path]


def _train_log_lines(records, digest: str) -> str:
    lines = [f"# manifest_digest={digest}", TRAIN_LOG_HEADER]
    for r in records:
        lines.append(
            f"{r.step},{r.l_mask!r},{r.l_match!r},{r.l_sp!r},{r.l_cs!r},{r.total!r}"
        )
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    config = TrainConfig.from_dict(load_json(args.config))
    if args.seed is not None:
        config.seed = args.seed
    train_scenes, _, kb, ontology, inputs = _load_train_inputs(args.data)
    out = _out_dir(args, "run")
    digest = write_manifest(
        out / "manifest.json",
        config.to_dict(),
        [args.config, *inputs],
        [out / "model.json", out / "train_log.csv"],
        config.seed,
    )
    result = train(config, train_scenes, kb, ontology.background_prototype)
    model_doc = result.model.to_dict()
    model_doc["manifest_digest"] = digest
    dump_canonical_json(model_doc, out / "model.json")
    (out / "train_log.csv").write_text(
        _train_log_lines(result.records, digest), encoding="utf-8"
    )
    if not args.quiet:
        last = result.records[-1]
        print(
            f"trained {config.steps} steps; final losses: mask={last.l_mask:.4f} "
            f"match={last.l_match:.4f} sp={last.l_sp:.4f} cs={last.l_cs:.4f}"
        )
    return 0


def _report_doc(report: MetricsReport, digest: str) -> dict:
    doc = report.to_dict()
    doc["manifest_digest"] = digest
    return doc


def cmd_eval(args) -> int:
    if args.mode not in ("inductive", "transductive"):
        raise ValueError(f"mode must be 'inductive' or 'transductive', got {args.mode!r}")
    model_doc = load_json(args.model)
    model = TrainedModel.from_dict(model_doc)
    scenes_path = Path(args.data) / "scenes.json"
    if not scenes_path.exists():
        raise FileNotFoundError(f"missing data file: {scenes_path}")
    _, eval_scenes = load_scenes(scenes_path)
    out_path = Path(args.out) if args.out else Path("metrics.json")
    digest = write_manifest(
        out_path.with_name(out_path.stem + ".manifest.json"),
        {"mode": args.mode, "model": str(args.model)},
        [args.model, scenes_path],
        [out_path],
        args.seed if args.seed is not None else model.config.get("seed"),
    )
    report = evaluate(model, eval_scenes, mode=args.mode)
    dump_canonical_json(_report_doc(report, digest), out_path)
    if not args.quiet:
        print(report.format_table())
    return 0


def _parse_targets(text: str | None):
    if text is None:
        return None
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_match(args) -> int:
    affinity = as_matrix(load_json(args.affinity), "affinity")
    rows = _parse_targets(args.row_targets)
    cols = _parse_targets(args.col_targets)
    if rows is None and cols is None:
        spec = MarginalSpec.uniform(*affinity.shape)
    else:
        if rows is None or cols is None:
            raise ValueError("provide both --row-targets and --col-targets or neither")
        spec = MarginalSpec(np.asarray(rows), np.asarray(cols))
    out_path = Path(args.out) if args.out else Path("plan.json")
    digest = write_manifest(
        out_path.with_name(out_path.stem + ".manifest.json"),
        {
            "epsilon": args.epsilon,
            "row_targets": spec.row_targets.tolist(),
            "col_targets": spec.col_targets.tolist(),
        },
        [args.affinity],
        [out_path],
        args.seed,
    )
    plan = sinkhorn_normalize(
        affinity, spec, epsilon=args.epsilon, max_iter=args.max_iter, tol=args.tol
    )
    dump_canonical_json(
        {
            "plan": plan.plan.tolist(),
            "converged": plan.converged,
            "marginal_error": plan.marginal_error,
            "iterations": plan.iterations,
            "matches": argmax_match(plan),
            "manifest_digest": digest,
        },
        out_path,
    )
    if not args.quiet:
        print(
            f"plan {affinity.shape[0]}x{affinity.shape[1]}: marginal error "
            f"{plan.marginal_error:.3e} after {plan.iterations} iterations"
        )
    return 0


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ValueError(
            f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMS}"
        )
    base = load_json(args.config)
    values = []
    for chunk in args.values.split(","):
        chunk = chunk.strip()
        if chunk:
            values.append(int(chunk) if args.param in ("k", "R") else float(chunk))
    if not values:
        raise ValueError("no sweep values supplied")
    train_scenes, eval_scenes, kb, ontology, inputs = _load_train_inputs(args.data)
    out_path = Path(args.out) if args.out else Path("sweep.csv")
    digest = write_manifest(
        out_path.with_name(out_path.stem + ".manifest.json"),
        {"param": args.param, "values": values, "config": base},
        [args.config, *inputs],
        [out_path],
        args.seed,
    )
    lines = [f"# manifest_digest={digest}", SWEEP_HEADER]
    for value in values:
        doc = dict(base)
        doc[args.param] = value
        config = TrainConfig.from_dict(doc)
        if args.seed is not None:
            config.seed = args.seed
        result = train(config, train_scenes, kb, ontology.background_prototype)
        report = evaluate(result.model, eval_scenes)
        lines.append(
            f"{value},{report.seen_miou!r},{report.unseen_miou!r},{report.harmonic!r}"
        )
        if not args.quiet:
            print(
                f"{args.param}={value}: seen={report.seen_miou:.1f} "
                f"unseen={report.unseen_miou:.1f} harmonic={report.harmonic:.1f}"
            )
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="modalmatch",
        description="Cross-modal graph matching experiments on a synthetic benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("spec", help="ontology spec JSON")
    p.add_argument("--scenes", type=int, default=200, help="scenes per split")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train on a generated benchmark")
    p.add_argument("config", help="train config JSON")
    p.add_argument("data", help="benchmark directory (from gen)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained model")
    p.add_argument("model", help="model JSON (from train)")
    p.add_argument("data", help="benchmark directory")
    p.add_argument("--mode", default="transductive", help="inductive or transductive")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("match", parents=[common], help="run the plan solver on a matrix")
    p.add_argument("affinity", help="JSON array-of-arrays affinity matrix")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--row-targets", default=None, help="comma-separated row sums")
    p.add_argument("--col-targets", default=None, help="comma-separated column sums")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", parents=[common], help="train/eval across a parameter range")
    p.add_argument("config", help="train config JSON")
    p.add_argument("--data", required=True, help="benchmark directory")
    p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
