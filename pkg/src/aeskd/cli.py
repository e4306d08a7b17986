"""Config-driven experiment runner.

Every command takes ``--config <path> --seed <u64> --out <dir>``; the seed
flag overrides the command-relevant seed from the config.  Exit codes: 0
success, 2 bad config/usage, 3 missing prerequisite artifact, 4 invalid
input, 1 internal error; failures also print a machine-readable JSON line
on stderr with an error category.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import tables
from .config import ExperimentConfig
from .experiments import MissingArtifact, Pipeline, RunSpec
from .fileformats import FormatError


def _load_config(args):
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    elif args.paper_preset:
        cfg = ExperimentConfig.paper_preset()
    else:
        cfg = ExperimentConfig()
    return cfg


def _pipeline(args):
    return Pipeline(_load_config(args), args.out).prepare()


def cmd_gen_corpus(args):
    pipeline = _pipeline(args)
    if args.seed is not None:
        pipeline.cfg.corpus.seed = args.seed
    corpus = pipeline.ensure_corpus()
    print(
        json.dumps(
            {
                "samples": len(corpus.records),
                "manifest": str(pipeline.out / "corpus" / "manifest.jsonl"),
                "config_hash": pipeline.hash,
            }
        )
    )


def cmd_pretrain_poc(args):
    pipeline = _pipeline(args)
    names = args.backbone or [b.name for b in pipeline.cfg.backbones]
    for name in names:
        if args.seed is not None:
            pipeline.cfg.backbone(name).seed = args.seed
        pipeline.ensure_poc(name)
        meta = json.loads((pipeline.out / "poc" / f"{name}.json").read_text())
        print(json.dumps({"backbone": name, "train_accuracy": meta["train_accuracy"]}))


def cmd_extract_gsf(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    names = args.backbone or [b.name for b in pipeline.cfg.backbones]
    for name in names:
        pipeline.require_poc(name)
        bank = pipeline.ensure_bank(name, args.resolution)
        print(
            json.dumps(
                {
                    "backbone": name,
                    "resolution": args.resolution,
                    "count": int(bank.ids.shape[0]),
                    "dim": int(bank.dim),
                    "path": str(pipeline.bank_path(name, args.resolution)),
                }
            )
        )


def cmd_train_distiller(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    for b in pipeline.cfg.backbones:
        pipeline.require_bank(b.name, pipeline.cfg.feature_resolution)
    seed = args.seed if args.seed is not None else pipeline.cfg.teacher_seed
    _, metrics = pipeline.ensure_teacher(seed=seed)
    print(json.dumps({k: metrics[k] for k in ("srcc", "plcc", "acc")}))


def cmd_export_knowledge(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    pipeline.require_teacher()
    records = pipeline.ensure_cache()
    print(json.dumps({"records": len(records), "path": str(pipeline.cache_path())}))


def _run_spec(args):
    return RunSpec(
        mode=args.mode,
        seed=args.seed if args.seed is not None else 0,
        resolution=args.resolution,
        frozen=args.frozen,
        supervise_features=not args.no_feature_term,
        supervise_outputs=not args.no_output_term,
        epochs=args.epochs,
    )


def cmd_train_student(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    spec = _run_spec(args)
    if spec.training_mode().needs_cache:
        pipeline.require_cache()
    meta = pipeline.ensure_run(spec)
    print(json.dumps({"key": meta["key"], "metrics": meta["metrics"]}))


def cmd_evaluate(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    spec = _run_spec(args)
    meta = pipeline.require_run(spec)
    student = pipeline.load_student(spec)
    metrics = pipeline.evaluate_student(student, spec)
    print(json.dumps({"key": spec.key(), "metrics": metrics}))


def cmd_match_eval(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    table = tables.matching_table(pipeline)
    print(json.dumps({k: v["srcc"] for k, v in table.items()}))


def cmd_miou_eval(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    for mode in ("kd", "baseline"):
        pipeline.require_run(RunSpec(mode, pipeline.cfg.student_seeds[0]))
    results, _ = tables.miou_study(pipeline, p=args.percentile)
    print(json.dumps({k: v["miou"] for k, v in results.items()}))


def cmd_variance_study(args):
    pipeline = _pipeline(args)
    pipeline.require_corpus()
    decompositions = tables.variance_study(pipeline)
    print(
        json.dumps(
            {
                m: {
                    "delta_training": rep.delta_training,
                    "delta_exp": rep.delta_exp,
                    "delta_split": rep.delta_split,
                }
                for m, rep in decompositions.items()
            }
        )
    )


def cmd_cost(args):
    pipeline = _pipeline(args)
    cost = tables.cost_table(pipeline)
    print(
        json.dumps(
            {
                "extra_total_macs": cost["extra_total"],
                "student_inference_macs": cost["student_report"].inference_macs,
                "student_training_macs_per_input": cost[
                    "student_report"
                ].training_macs_per_input,
            }
        )
    )


def cmd_reproduce_tables(args):
    pipeline = _pipeline(args)
    ledger = tables.reproduce_tables(pipeline)
    if ledger["failed"]:
        raise SystemExit(1)


def _add_run_flags(p):
    p.add_argument("--mode", default="baseline", help="training mode")
    p.add_argument("--resolution", default="small", choices=["small", "full"])
    p.add_argument("--frozen", action="store_true", help="freeze the backbone")
    p.add_argument("--no-feature-term", action="store_true",
                   help="drop feature supervision (kd mode)")
    p.add_argument("--no-output-term", action="store_true",
                   help="drop output supervision (kd mode)")
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aeskd",
        description="knowledge-distilled aesthetics assessment on a synthetic corpus",
    )
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the relevant seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--paper-preset", action="store_true",
                        help="use the full-scale learning-rate preset")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", help="render the synthetic corpus").set_defaults(
        func=cmd_gen_corpus
    )

    p = sub.add_parser("pretrain-poc", help="pre-train surrogate backbones")
    p.add_argument("--backbone", action="append", help="roster name (repeatable)")
    p.set_defaults(func=cmd_pretrain_poc)

    p = sub.add_parser("extract-gsf", help="extract pooled features into banks")
    p.add_argument("--backbone", action="append")
    p.add_argument("--resolution", default="full", choices=["full", "small"])
    p.set_defaults(func=cmd_extract_gsf)

    sub.add_parser("train-distiller", help="train the knowledge distiller").set_defaults(
        func=cmd_train_distiller
    )
    sub.add_parser("export-knowledge", help="write the teacher cache").set_defaults(
        func=cmd_export_knowledge
    )

    p = sub.add_parser("train-student", help="train a student model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="evaluate a trained student")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    sub.add_parser("match-eval", help="nearest-neighbour feature comparison").set_defaults(
        func=cmd_match_eval
    )

    p = sub.add_parser("miou-eval", help="activation-map subject localization")
    p.add_argument("--percentile", type=int, default=70)
    p.set_defaults(func=cmd_miou_eval)

    sub.add_parser("variance-study", help="training/split spread decomposition").set_defaults(
        func=cmd_variance_study
    )
    sub.add_parser("cost", help="multiply-accumulate accounting").set_defaults(
        func=cmd_cost
    )
    sub.add_parser(
        "reproduce-tables", help="run all table analogs and the acceptance ledger"
    ).set_defaults(func=cmd_reproduce_tables)
    return parser


def _fail(category, message, code):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except MissingArtifact as exc:
        return _fail("missing-artifact", str(exc), 3)
    except FileNotFoundError as exc:
        return _fail("missing-artifact", str(exc), 3)
    except (json.JSONDecodeError, KeyError) as exc:
        return _fail("config", f"bad configuration: {exc}", 2)
    except FormatError as exc:
        return _fail("invalid-input", str(exc), 4)
    except ValueError as exc:
        return _fail("invalid-input", str(exc), 4)
    except SystemExit as exc:
        return exc.code
    except Exception as exc:  # pragma: no cover - defensive
        return _fail("internal", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
