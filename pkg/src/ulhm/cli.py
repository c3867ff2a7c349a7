"""Command-line entry point: ``ulhm {metrics,verify,train,eval}``.

Exit codes: 0 success/PASS, 1 verification FAIL, 2 input error, 3 compute
error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import ComputeError, FormatError, InputError, TrainingDivergedError
from .metrics import BettiConfig, MetricBundle, SlicedW2Config
from .store import EmbeddingSet, load_manifest
from .toy.losses import LossWeights
from .toy.synthetic import SyntheticSpec
from .toy.training import TASKS, default_config
from .verifier import MetricConfig, Thresholds, VerifierFlags, build_report, compute_and_verify, compute_metrics, verify

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_COMPUTE, EXIT_DIVERGED = 0, 1, 2, 3, 4


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", type=Path, help="JSON manifest of embedding files")
    common.add_argument("--out", type=Path, help="output path (stdout when omitted)")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--kappa", type=int, default=5)
    common.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    common.add_argument("--projections", type=int, default=128, help="sliced W2 directions")

    metric_opts = argparse.ArgumentParser(add_help=False)
    metric_opts.add_argument("--epsilon", type=float, help="fixed beta0 scale (auto rule when omitted)")
    metric_opts.add_argument("--auto-rule", choices=("largest-gap", "median-knn"), default="largest-gap")
    metric_opts.add_argument("--trust-source", choices=("rank", "purity"), default="rank")
    metric_opts.add_argument("--bilipschitz-pairs", type=int, default=0, help="0 = all pairs")

    p = argparse.ArgumentParser(prog="ulhm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("metrics", parents=[common, metric_opts], help="compute the metric bundle")

    v = sub.add_parser("verify", parents=[common, metric_opts], help="hierarchical verification")
    v.add_argument("--bundle-json", type=Path, help="pre-filled metric bundle instead of embeddings")
    v.add_argument("--paired", action="store_true", help="modalities are paired (alignment check)")
    v.add_argument("--clustering", action="store_true", help="clustering required (continuity check)")
    d = Thresholds()
    v.add_argument("--tau-w", type=float, default=d.tau_w)
    v.add_argument("--tau-t", type=float, default=d.tau_t)
    v.add_argument("--tau-c", type=float, default=d.tau_c)
    v.add_argument("--tau-a", type=float, default=d.tau_a)
    v.add_argument("--beta0-max", type=int, default=d.beta0_max)

    t = sub.add_parser("train", parents=[common], help="train a toy model and write a run directory")
    t.add_argument("--task", choices=TASKS, default="transfer")
    t.add_argument("--epochs", type=int)
    t.add_argument("--stage2-epochs", type=int)
    t.add_argument("--stage3-epochs", type=int)
    t.add_argument("--stages", type=_ints)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--latent-dim", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--activation", choices=("tanh", "leaky_relu"))
    w = LossWeights()
    for name in ("lambda_c", "lambda_l", "lambda_cos", "lambda_eucl", "lambda_cont", "lambda_cent", "temperature"):
        t.add_argument("--" + name.replace("_", "-"), type=float, default=getattr(w, name))
    s = SyntheticSpec()
    t.add_argument("--classes", type=int, default=s.n_classes)
    t.add_argument("--per-class", type=int, default=s.per_class)
    t.add_argument("--obs-dim", type=int, default=s.obs_dim)
    t.add_argument("--domains", type=int, default=s.domains)
    t.add_argument("--transform", choices=("rotation", "affine", "monotone-radial"), default=s.transform)
    t.add_argument("--noise", type=float, default=s.noise)
    t.add_argument("--separation", type=float, default=s.separation)
    t.add_argument("--unseen", type=_ints, default=pipeline.DEFAULT_UNSEEN, help="zero-shot held-out classes")
    t.add_argument("--rho-train", type=_floats, default=(0.25, 0.5, 0.75, 1.0))

    e = sub.add_parser("eval", parents=[common], help="evaluate a trained run")
    e.add_argument("task", choices=("recover", "transfer", "zeroshot"))
    e.add_argument("--run", type=Path, required=True, help="run directory written by 'train'")
    e.add_argument("--rho", type=_floats, default=pipeline.DEFAULT_RHOS)
    e.add_argument("--export-latents", type=Path, help="transfer only: write test latents + manifest here")
    return p


def _metric_config(args) -> MetricConfig:
    return MetricConfig(
        kappa=args.kappa,
        metric=args.metric,
        betti=BettiConfig(epsilon=args.epsilon, auto_rule=args.auto_rule, kappa=args.kappa),
        w2=SlicedW2Config(n_projections=args.projections, seed=args.seed),
        trust_source=args.trust_source,
        bilipschitz_pairs=args.bilipschitz_pairs,
        seed=args.seed,
    )


def _emit(doc: dict, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    else:
        pipeline.dump_json(doc, out)


def _require_manifest(args):
    if args.manifest is None:
        raise InputError("--manifest is required")
    return load_manifest(args.manifest)


def cmd_metrics(args) -> int:
    man = _require_manifest(args)
    cfg = _metric_config(args)
    bundle = compute_metrics(man.domains, man.inputs, man.pairs, cfg)
    flags = VerifierFlags(**man.flags)
    _emit(build_report(bundle, None, Thresholds(), flags, cfg.to_dict()), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    th = Thresholds(args.tau_w, args.tau_t, args.tau_c, args.tau_a, args.beta0_max)
    if args.bundle_json is not None:
        try:
            bundle = MetricBundle.from_dict(pipeline.read_json(args.bundle_json))
        except (TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"{args.bundle_json}: malformed metric bundle ({exc})") from None
        flags = VerifierFlags(args.paired, args.clustering)
        verdict = verify(bundle, th, flags)
        config = {"bundle_json": str(args.bundle_json)}
    else:
        man = _require_manifest(args)
        flags = VerifierFlags(args.paired or man.flags["has_paired_modalities"],
                              args.clustering or man.flags["requires_clustering"])
        cfg = _metric_config(args)
        bundle, verdict = compute_and_verify(man.domains, man.inputs, man.pairs, cfg, th, flags)
        config = cfg.to_dict()
    _emit(build_report(bundle, verdict, th, flags, config), args.out)
    return EXIT_OK if verdict.passed else EXIT_FAIL


def cmd_train(args) -> int:
    if args.out is None:
        raise InputError("train needs --out DIR")
    weights = LossWeights(args.lambda_c, args.lambda_l, args.lambda_cos, args.lambda_eucl, args.lambda_cont,
                          args.lambda_cent, args.temperature)
    cfg = default_config(args.task, args.seed, weights=weights, epochs=args.epochs,
                         stage2_epochs=args.stage2_epochs, stage3_epochs=args.stage3_epochs, stages=args.stages,
                         lr=args.lr, batch_size=args.batch_size, latent_dim=args.latent_dim, hidden=args.hidden,
                         activation=args.activation, kappa=args.kappa)
    if args.manifest is not None:
        source = pipeline.DataSource(manifest=str(args.manifest.resolve()))
    else:
        source = pipeline.DataSource(synthetic=SyntheticSpec(
            args.classes, args.per_class, args.obs_dim, args.domains, args.transform, args.noise,
            args.separation, args.seed))
    run = pipeline.train_run(args.task, cfg, source, args.unseen, args.rho_train)
    summary = pipeline.save_run(run, args.out)
    print(json.dumps({"run": str(args.out), "task": args.task, "checkpoints": len(summary["checkpoints"])}))
    return EXIT_OK


def cmd_eval(args) -> int:
    run = pipeline.load_run(args.run)
    source = pipeline.DataSource(manifest=str(args.manifest.resolve())) if args.manifest else None
    report = pipeline.evaluate(args.task, run, source, args.rho)
    if args.task == "transfer":
        test = (source or run.source).load("test")
        domains = [EmbeddingSet(run.models.universal(k, b.observations), b.labels, b.domain_tag)
                   for k, b in enumerate(test)]
        inputs = {b.domain_tag: b.observations for b in test}
        mcfg = MetricConfig(kappa=args.kappa, metric=args.metric,
                            w2=SlicedW2Config(n_projections=args.projections, seed=args.seed), seed=args.seed)
        th, flags = Thresholds(), VerifierFlags(has_paired_modalities=False, requires_clustering=True)
        bundle, verdict = compute_and_verify(domains, inputs, None, mcfg, th, flags)
        report["verification"] = build_report(bundle, verdict, th, flags, mcfg.to_dict())
        if args.export_latents is not None:
            pipeline.export_latents(run, test, args.export_latents)
    _emit(report, args.out)
    return EXIT_OK


COMMANDS = {"metrics": cmd_metrics, "verify": cmd_verify, "train": cmd_train, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"ulhm: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergedError as exc:
        print(f"ulhm: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ComputeError as exc:
        print(f"ulhm: compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"ulhm: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
