"""Command-line interface.

Subcommands: ``score``, ``eval``, ``coreset build``, ``theory
fpr|delta|sweep``, ``synth``. Exit codes: 0 success, 2 data errors,
3 configuration errors (including bad command lines).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import benchmark as bench
from .errors import ConfigError, CoodError, DataError
from .jsonio import canonical_json
from .metrics import auroc, fpr_at_tpr
from .shift import ScoreVariant, read_score_records, write_score_records
from .store.manifest import load_manifest, load_manifest_records
from .store.tensor_pack import load_coreset, load_tensor_pack, save_coreset
from .store.vocab import load_vocabulary
from .synth import SynthConfig, synth_world, write_synth_world
from .theory import (
    BernoulliComponentModel,
    GaussianScorePair,
    delta_fpr_add_component,
    fpr_exact,
    fpr_normal,
    threshold_for_tpr,
)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    """Argparse parser whose usage errors exit with the config code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="cood", description="Component-based OOD detection engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="score a tensor pack against a vocabulary")
    p_score.add_argument("--vocab", required=True)
    p_score.add_argument("--input", required=True, help="tensor pack (.coodt)")
    p_score.add_argument("--coreset", default=None, help="coreset pack for compositional scoring")
    p_score.add_argument("--alpha", type=float, default=0.5)
    p_score.add_argument("--k", type=int, default=4)
    p_score.add_argument("--mask-tau", type=float, default=0.5)
    p_score.add_argument("--temperature", type=float, default=1.0)
    p_score.add_argument("--variant", choices=[v.value for v in ScoreVariant], default="full")
    p_score.add_argument("--workers", type=int, default=1)
    p_score.add_argument("--renormalize", action="store_true",
                         help="renormalize off-norm vocabulary embeddings instead of rejecting")
    p_score.add_argument("--out", required=True, help="output score file (JSON lines)")

    p_eval = sub.add_parser("eval", help="detection metrics from score files")
    p_eval.add_argument("--id", required=True, dest="id_scores", help="ID score file")
    p_eval.add_argument("--ood", required=True, action="append", dest="ood_scores",
                        help="OOD score file, repeatable; NAME=PATH to name the set")
    p_eval.add_argument("--tpr", type=float, default=0.95)
    p_eval.add_argument("--out", default=None, help="write the report JSON here instead of stdout")

    p_coreset = sub.add_parser("coreset", help="coreset operations")
    sub_coreset = p_coreset.add_subparsers(dest="coreset_command", required=True)
    p_build = sub_coreset.add_parser("build", help="farthest-point-sample a training coreset")
    p_build.add_argument("--train", required=True,
                         help="id_train manifest (.json) or tensor pack with --manifest")
    p_build.add_argument("--manifest", default=None,
                         help="manifest providing labels when --train is a pack")
    p_build.add_argument("--fraction", type=float, default=0.01)
    p_build.add_argument("--k", type=int, default=4)
    p_build.add_argument("--mask-tau", type=float, default=0.5)
    p_build.add_argument("--vocab", required=True)
    p_build.add_argument("--renormalize", action="store_true")
    p_build.add_argument("--out", required=True)

    p_theory = sub.add_parser("theory", help="binomial / normal FPR analysis (CSV)")
    sub_theory = p_theory.add_subparsers(dest="theory_command", required=True)
    for name, help_text in (
        ("fpr", "exact and normal FPR for one configuration"),
        ("delta", "FPR change when adding one component"),
    ):
        p = sub_theory.add_parser(name, help=help_text)
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--psi-in", type=float, required=True)
        p.add_argument("--psi-out", type=float, required=True)
        p.add_argument("--lam", "--lambda", type=float, required=True, dest="lam")
        p.add_argument("--out", default=None)
    p_sweep = sub_theory.add_parser("sweep", help="grid sweep")
    p_sweep.add_argument("--n", required=True, help="comma-separated component counts")
    p_sweep.add_argument("--psi-in", required=True, help="comma-separated values")
    p_sweep.add_argument("--psi-out", required=True, help="comma-separated values")
    p_sweep.add_argument("--lam", "--lambda", required=True, dest="lam",
                         help="comma-separated values")
    p_sweep.add_argument("--out", default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark world")
    p_synth.add_argument("--config", default=None, help="synth config JSON; defaults apply")
    p_synth.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_bench = sub.add_parser("bench", help="end-to-end benchmark over a synth/world directory")
    p_bench.add_argument("--world", required=True, help="directory written by `cood synth`")
    p_bench.add_argument("--alpha", type=float, default=0.5)
    p_bench.add_argument("--k", type=int, default=4)
    p_bench.add_argument("--mask-tau", type=float, default=0.5)
    p_bench.add_argument("--temperature", type=float, default=1.0)
    p_bench.add_argument("--variant", choices=[v.value for v in ScoreVariant], default="full")
    p_bench.add_argument("--fraction", type=float, default=0.01)
    p_bench.add_argument("--tpr", type=float, default=0.95)
    p_bench.add_argument("--workers", type=int, default=1)
    p_bench.add_argument("--seed", type=int, default=None, help="recorded in the report")
    p_bench.add_argument("--out", default=None, help="directory for score files and report")
    return parser


def _theory_rows(ns, psis_in, psis_out, lams) -> list[dict]:
    rows = []
    for n in ns:
        for psi_in in psis_in:
            for psi_out in psis_out:
                for lam in lams:
                    m = BernoulliComponentModel(n, psi_in, psi_out)
                    g = GaussianScorePair.from_bernoulli(m)
                    delta = delta_fpr_add_component(m, lam)
                    rows.append(
                        {
                            "n": n,
                            "psi_in": psi_in,
                            "psi_out": psi_out,
                            "lambda": lam,
                            "T": threshold_for_tpr(m, lam),
                            "fpr_exact": repr(fpr_exact(m, lam)),
                            "fpr_normal": repr(fpr_normal(g, lam)),
                            "delta": repr(delta.delta),
                        }
                    )
    return rows


def _write_csv(rows: list[dict], out: Optional[str]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(
        buf, fieldnames=["n", "psi_in", "psi_out", "lambda", "T", "fpr_exact", "fpr_normal", "delta"]
    )
    writer.writeheader()
    writer.writerows(rows)
    if out:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _cmd_score(args) -> int:
    vocab = load_vocabulary(args.vocab, renormalize=args.renormalize)
    records = load_tensor_pack(args.input)
    coreset = load_coreset(args.coreset) if args.coreset else None
    if coreset is not None:
        coreset.validate_against(vocab)
    config = bench.BenchmarkConfig(
        alpha=args.alpha,
        temperature=args.temperature,
        variant=ScoreVariant(args.variant),
        k=args.k,
        mask_tau=args.mask_tau,
        workers=args.workers,
    )
    results = bench.score_records(records, vocab, coreset, config)
    write_score_records(results, args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    id_records = read_score_records(args.id_scores)
    if not id_records:
        raise DataError(f"{args.id_scores}: no score records")
    id_cood = [r.cood for r in id_records]
    per_set = {}
    for spec in args.ood_scores:
        name, _, path = spec.rpartition("=")
        if not name:
            name, path = Path(path).stem, path
        ood_records = read_score_records(path)
        if not ood_records:
            raise DataError(f"{path}: no score records")
        ood_cood = [r.cood for r in ood_records]
        per_set[name] = {
            "auroc": auroc(id_cood, ood_cood),
            "fpr_at_tpr": fpr_at_tpr(id_cood, ood_cood, args.tpr),
            "tpr_target": args.tpr,
        }
    names = sorted(per_set)
    doc = {
        "per_ood_set": {n: per_set[n] for n in names},
        "macro_auroc": sum(per_set[n]["auroc"] for n in names) / len(names),
        "macro_fpr": sum(per_set[n]["fpr_at_tpr"] for n in names) / len(names),
    }
    text = canonical_json(doc) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_coreset_build(args) -> int:
    vocab = load_vocabulary(args.vocab, renormalize=args.renormalize)
    train_path = Path(args.train)
    if train_path.suffix == ".json" and args.manifest is None:
        manifest = load_manifest(train_path)
        records = load_manifest_records(manifest, train_path.parent)
    else:
        if args.manifest is None:
            raise ConfigError("--manifest is required when --train is a tensor pack")
        manifest = load_manifest(args.manifest)
        records = {r.sample_id: r for r in load_tensor_pack(train_path)}
    labels = {r.sample_id: r.label for r in manifest.records if r.label}
    config = bench.BenchmarkConfig(
        k=args.k, mask_tau=args.mask_tau, coreset_fraction=args.fraction
    )
    coreset = bench.coreset_from_training(vocab, records, labels, config)
    save_coreset(coreset, args.out)
    return EXIT_OK


def _cmd_theory(args) -> int:
    if args.theory_command in ("fpr", "delta"):
        rows = _theory_rows([args.n], [args.psi_in], [args.psi_out], [args.lam])
    else:
        rows = _theory_rows(
            _parse_ints(args.n),
            _parse_floats(args.psi_in),
            _parse_floats(args.psi_out),
            _parse_floats(args.lam),
        )
    _write_csv(rows, args.out)
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        kwargs = {f: getattr(config, f) for f in SynthConfig.__dataclass_fields__}
        kwargs["seed"] = args.seed
        config = SynthConfig(**kwargs)
    world = synth_world(config)
    write_synth_world(world, args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    world = Path(args.world)
    vocab = load_vocabulary(world / "vocab.json")

    def load_split(name: str):
        manifest = load_manifest(world / f"{name}.json")
        return manifest, load_manifest_records(manifest, world)

    id_train = load_split("id_train")
    id_test = load_split("id_test")
    ood_names = sorted(
        p.stem for p in world.glob("ood_*.json") if p.stem not in ("id_train", "id_test")
    )
    if not ood_names:
        raise DataError(f"{world}: no ood_*.json manifests found")
    ood_tests = [load_split(name) for name in ood_names]
    config = bench.BenchmarkConfig(
        alpha=args.alpha,
        temperature=args.temperature,
        variant=ScoreVariant(args.variant),
        k=args.k,
        mask_tau=args.mask_tau,
        coreset_fraction=args.fraction,
        tpr_target=args.tpr,
        workers=args.workers,
        seed=args.seed,
    )
    result = bench.run_benchmark(vocab, id_train, id_test, ood_tests, config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for split, records in result.scores.items():
            write_score_records(records, out / f"scores_{split}.jsonl")
        (out / "report.json").write_text(result.report.to_json(), encoding="utf-8")
    else:
        sys.stdout.write(result.report.to_json())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "score":
            return _cmd_score(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "coreset":
            return _cmd_coreset_build(args)
        if args.command == "theory":
            return _cmd_theory(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "bench":
            return _cmd_bench(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"cood: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoodError as exc:
        print(f"cood: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cood: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
