"""Directional table analogs and the pass/fail ledger.

Each function drives the pipeline, writes a schema-validated JSON report
plus CSV (and a figure where a curve or comparison warrants one), and
returns the numbers used by the acceptance checks.  ``reproduce_tables``
runs everything and emits the ledger.
"""

from __future__ import annotations

import itertools
import json
import time

import numpy as np

from . import distillation as dl
from . import evaluation as ev
from . import fileformats as ff
from . import reporting
from .experiments import PLEASANT_SCORE, Pipeline, RunSpec
from .synthcorpus import resize_mask
from .backbones import activation_map


def _mean(values):
    return float(np.mean(values))


def _report(pipeline, name, records, seeds, **extra):
    return reporting.write_report(
        pipeline.path("reports", f"{name}.json"),
        records,
        pipeline.hash,
        seeds,
        **extra,
    )


# -- teacher-side tables (GSF combinations, matching) -----------------------------------


def teacher_combination_table(pipeline, resolutions=("full", "small")):
    """Distiller performance for every backbone combination and resolution."""
    names = [b.name for b in pipeline.cfg.backbones]
    combos = []
    for k in range(1, len(names) + 1):
        combos.extend(itertools.combinations(names, k))
    rows, records = [], []
    for resolution in resolutions:
        for combo in combos:
            _, metrics = pipeline.ensure_teacher(combo, resolution)
            row = {
                "combo": "+".join(combo),
                "resolution": resolution,
                "srcc": metrics["srcc"],
                "plcc": metrics["plcc"],
                "acc": metrics["acc"],
            }
            rows.append(row)
            records.append(
                dict(
                    metric="srcc",
                    value=metrics["srcc"],
                    n=pipeline.cfg.split.test_size,
                    run=f"teacher_{row['combo']}_{resolution}",
                )
            )
    _report(pipeline, "teacher_combinations", records, [pipeline.cfg.teacher_seed])
    reporting.write_table_csv(
        pipeline.path("reports", "teacher_combinations.csv"),
        rows,
        ["combo", "resolution", "srcc", "plcc", "acc"],
    )
    full = {r["combo"]: r["srcc"] for r in rows if r["resolution"] == "full"}
    reporting.figure_bars(
        pipeline.path("reports", "fig_teacher_combinations.png"),
        list(full),
        list(full.values()),
        "SRCC",
        title="distiller on stacked features (full resolution)",
    )
    return rows


def matching_table(pipeline):
    """Nearest-neighbour scoring with raw stacked features vs distilled features."""
    corpus = pipeline.ensure_corpus()
    names = tuple(b.name for b in pipeline.cfg.backbones)
    bank = pipeline.combined_bank(names, pipeline.cfg.feature_resolution)
    train, test = corpus.subset("train"), corpus.subset("test")
    train_ids = [r.sample_id for r in train]
    test_ids = [r.sample_id for r in test]
    gt = corpus.scores(test)
    bank_scores = corpus.scores(train)

    gsf_pred, gsf_info = ev.match_eval(
        bank.lookup(test_ids), bank.lookup(train_ids), bank_scores,
        bank_ids=train_ids, query_gt_scores=gt,
    )

    distiller, _ = pipeline.ensure_teacher()
    af_train, _ = dl.distiller_predict(distiller, bank.lookup(train_ids))
    af_test, _ = dl.distiller_predict(distiller, bank.lookup(test_ids))
    af_pred, af_info = ev.match_eval(
        af_test, af_train, bank_scores, bank_ids=train_ids, query_gt_scores=gt
    )

    rows = [
        {"feature": "stacked_gsf", **_flat(gsf_info["report"])},
        {"feature": "aesthetic", **_flat(af_info["report"])},
    ]
    records = [
        dict(metric=m, value=row[m], n=len(test), run=f"match_{row['feature']}")
        for row in rows
        for m in ("srcc", "plcc", "acc")
    ]
    _report(pipeline, "matching", records, [pipeline.cfg.teacher_seed])
    reporting.write_table_csv(
        pipeline.path("reports", "matching.csv"), rows, ["feature", "srcc", "plcc", "acc"]
    )
    return {row["feature"]: row for row in rows}


def _flat(report):
    return {"srcc": report.srcc, "plcc": report.plcc, "acc": report.acc}


# -- student ablations --------------------------------------------------------------------


def kd_ablation_table(pipeline, seeds=None):
    """KD on/off times trainable/frozen backbone (the core four cells)."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds)
    cells = {
        "baseline_frozen": [RunSpec("baseline", s, frozen=True) for s in seeds],
        "baseline_trainable": [RunSpec("baseline", s) for s in seeds],
        "kd_frozen": [RunSpec("kd", s, frozen=True) for s in seeds],
        "kd_trainable": [RunSpec("kd", s) for s in seeds],
    }
    pipeline.teacher_gate()
    pipeline.ensure_runs([s for specs in cells.values() for s in specs])
    table = {}
    records = []
    for cell, specs in cells.items():
        per_seed = [pipeline.ensure_run(s)["metrics"] for s in specs]
        table[cell] = {
            "srcc": _mean([m["srcc"] for m in per_seed]),
            "plcc": _mean([m["plcc"] for m in per_seed]),
            "acc": _mean([m["acc"] for m in per_seed]),
            "per_seed_srcc": [m["srcc"] for m in per_seed],
        }
        records.append(
            dict(metric="srcc", value=table[cell]["srcc"], n=len(seeds), run=cell)
        )
    _report(pipeline, "kd_ablation", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "kd_ablation.csv"),
        [{"cell": k, **{m: v for m, v in t.items() if m != "per_seed_srcc"}} for k, t in table.items()],
        ["cell", "srcc", "plcc", "acc"],
    )
    reporting.figure_bars(
        pipeline.path("reports", "fig_kd_ablation.png"),
        list(table),
        [table[k]["srcc"] for k in table],
        "SRCC (mean over seeds)",
        title="supervision source x backbone trainability",
    )
    return table


def loss_term_table(pipeline, seeds=None):
    """Feature-only and output-only supervision against baseline and both."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds)
    variants = {
        "none": [RunSpec("baseline", s) for s in seeds],
        "feature_only": [
            RunSpec("kd", s, supervise_outputs=False) for s in seeds
        ],
        "output_only": [
            RunSpec("kd", s, supervise_features=False) for s in seeds
        ],
        "both": [RunSpec("kd", s) for s in seeds],
    }
    pipeline.ensure_runs([s for specs in variants.values() for s in specs])
    table = {}
    records = []
    for name, specs in variants.items():
        vals = [pipeline.ensure_run(s)["metrics"]["srcc"] for s in specs]
        table[name] = {"srcc": _mean(vals), "per_seed": vals}
        records.append(dict(metric="srcc", value=table[name]["srcc"], n=len(seeds), run=name))
    _report(pipeline, "loss_terms", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "loss_terms.csv"),
        [{"variant": k, "srcc": v["srcc"]} for k, v in table.items()],
        ["variant", "srcc"],
    )
    return table


def resolution_table(pipeline, seeds=None):
    """Full- vs small-resolution students, with and without distillation."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds[:3])
    cells = {
        ("baseline", "full"): [RunSpec("baseline", s, resolution="full") for s in seeds],
        ("baseline", "small"): [RunSpec("baseline", s) for s in seeds],
        ("kd", "full"): [RunSpec("kd", s, resolution="full") for s in seeds],
        ("kd", "small"): [RunSpec("kd", s) for s in seeds],
    }
    pipeline.ensure_runs([s for specs in cells.values() for s in specs])
    table = {}
    records = []
    for (mode, resolution), specs in cells.items():
        vals = [pipeline.ensure_run(s)["metrics"]["srcc"] for s in specs]
        table[(mode, resolution)] = _mean(vals)
        records.append(
            dict(metric="srcc", value=_mean(vals), n=len(seeds), run=f"{mode}_{resolution}")
        )
    drops = {
        "baseline_drop": table[("baseline", "full")] - table[("baseline", "small")],
        "kd_drop": table[("kd", "full")] - table[("kd", "small")],
    }
    records.extend(dict(metric=k, value=v, n=len(seeds)) for k, v in drops.items())
    _report(pipeline, "resolution", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "resolution.csv"),
        [
            {"mode": m, "resolution": r, "srcc": v}
            for (m, r), v in table.items()
        ],
        ["mode", "resolution", "srcc"],
    )
    reporting.figure_bars(
        pipeline.path("reports", "fig_resolution.png"),
        [f"{m}@{r}" for (m, r) in table],
        list(table.values()),
        "SRCC",
        title="input-resolution sensitivity",
    )
    return table, drops


def mixed_supervision_table(pipeline, seeds=None):
    """Teacher-only vs mixed-loss vs mixed-label supervision."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds[:3])
    variants = {
        "teacher_only": [RunSpec("kd", s) for s in seeds],
        "mixed_loss": [RunSpec("mixed_loss", s) for s in seeds],
        "mixed_label": [RunSpec("mixed_label", s) for s in seeds],
    }
    pipeline.ensure_runs([s for specs in variants.values() for s in specs])
    table = {}
    records = []
    for name, specs in variants.items():
        vals = [pipeline.ensure_run(s)["metrics"]["srcc"] for s in specs]
        table[name] = _mean(vals)
        records.append(dict(metric="srcc", value=table[name], n=len(seeds), run=name))
    _report(pipeline, "mixed_supervision", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "mixed_supervision.csv"),
        [{"variant": k, "srcc": v} for k, v in table.items()],
        ["variant", "srcc"],
    )
    return table


def task_variant_table(pipeline, seeds=None):
    """Binary-classification and score-regression students, with/without KD."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds[:3])
    variants = {
        "binary_baseline": [RunSpec("binary_baseline", s) for s in seeds],
        "binary_kd": [RunSpec("binary_kd", s) for s in seeds],
        "regress_baseline": [RunSpec("regress_baseline", s) for s in seeds],
        "regress_kd": [RunSpec("regress_kd", s) for s in seeds],
    }
    pipeline.ensure_runs([s for specs in variants.values() for s in specs])
    table = {}
    records = []
    for name, specs in variants.items():
        metrics = [pipeline.ensure_run(s)["metrics"] for s in specs]
        table[name] = {
            "srcc": _mean([m["srcc"] for m in metrics]),
            "acc": _mean([m["acc"] for m in metrics]),
        }
        for m in ("srcc", "acc"):
            records.append(dict(metric=m, value=table[name][m], n=len(seeds), run=name))
    _report(pipeline, "task_variants", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "task_variants.csv"),
        [{"variant": k, **v} for k, v in table.items()],
        ["variant", "srcc", "acc"],
    )
    return table


def semantic_guidance_table(pipeline, seeds=None):
    """Baseline vs auxiliary-input vs auxiliary-task vs distillation."""
    seeds = list(seeds if seeds is not None else pipeline.cfg.student_seeds[:3])
    variants = {
        "baseline": [RunSpec("baseline", s) for s in seeds],
        "multimodal": [RunSpec("multimodal", s) for s in seeds],
        "multitask": [RunSpec("multitask", s) for s in seeds],
        "kd": [RunSpec("kd", s) for s in seeds],
    }
    pipeline.ensure_runs([s for specs in variants.values() for s in specs])
    table = {}
    records = []
    for name, specs in variants.items():
        vals = [pipeline.ensure_run(s)["metrics"]["srcc"] for s in specs]
        table[name] = _mean(vals)
        records.append(dict(metric="srcc", value=table[name], n=len(seeds), run=name))
    _report(pipeline, "semantic_guidance", records, seeds)
    reporting.write_table_csv(
        pipeline.path("reports", "semantic_guidance.csv"),
        [{"variant": k, "srcc": v} for k, v in table.items()],
        ["variant", "srcc"],
    )
    return table


# -- subject-extraction study ------------------------------------------------------------------


def miou_study(pipeline, seed=None, p=70):
    """Activation-map mIoU on the aesthetically-pleasant subset.

    Compares the distilled student against the no-KD student (and the POC
    backbones) at the student's input resolution; emits the full
    5..95-percentile curve as CSV and a figure.
    """
    seed = pipeline.cfg.student_seeds[0] if seed is None else seed
    corpus = pipeline.ensure_corpus()
    size = pipeline.resolution_px("small")
    lo, hi = pipeline.cfg.corpus.mask_fraction
    subset = []
    for r in corpus.subset("test"):
        if r.score > PLEASANT_SCORE:
            mask = corpus.load_mask(r)
            if lo <= mask.mean() <= hi:
                subset.append(r)
    if len(subset) < 5:
        raise RuntimeError(
            f"only {len(subset)} pleasant test samples; corpus too small for the study"
        )
    masks = [resize_mask(corpus.load_mask(r), size) > 0.5 for r in subset]
    images = [corpus.load_image(r, size=size) for r in subset]

    models = {
        "student_kd": pipeline.load_student(RunSpec("kd", seed)),
        "student_no_kd": pipeline.load_student(RunSpec("baseline", seed)),
    }
    for b in pipeline.cfg.backbones:
        models[f"poc_{b.name}"] = pipeline.ensure_poc(b.name)

    results, curves = {}, {}
    for name, model in models.items():
        maps = [activation_map(model, img) for img in images]
        miou_p, curve, skipped = ev.miou_eval(maps, masks, p=p)
        results[name] = {"miou": miou_p, "skipped": skipped}
        curves[name] = curve

    records = [
        dict(metric=f"miou_p{p}", value=res["miou"], n=len(subset), run=name)
        for name, res in results.items()
    ]
    _report(pipeline, "miou", records, [seed], percentile=p)
    rows = []
    for pct_idx, (pct, _) in enumerate(curves["student_kd"]):
        rows.append([pct] + [round(curves[k][pct_idx][1], 6) for k in curves])
    reporting.write_curve_csv(
        pipeline.path("reports", "miou_curve.csv"), rows, ["percentile", *curves]
    )
    reporting.figure_curves(
        pipeline.path("reports", "fig_miou_curve.png"),
        curves,
        "segmentation threshold (percentile)",
        "mean IoU",
        title=f"main-subject localization ({len(subset)} pleasant images)",
    )
    return results, curves


# -- variance and cost ------------------------------------------------------------------------


def variance_study(pipeline):
    """Training-randomness and split spreads for the teacher protocol."""
    repeats = pipeline.cfg.variance_repeats
    names = tuple(b.name for b in pipeline.cfg.backbones)
    same_split = {"srcc": [], "plcc": [], "acc": []}
    for seed in range(repeats):
        _, metrics = pipeline.ensure_teacher(names, seed=1000 + seed)
        for m in same_split:
            same_split[m].append(metrics[m])

    corpus = pipeline.ensure_corpus()
    bank = pipeline.combined_bank(names, pipeline.cfg.feature_resolution)
    sched = pipeline.cfg.distiller_schedule
    cross_split = {"srcc": [], "plcc": [], "acc": []}
    from .ratings import mean_score

    folds_path = pipeline.path("teacher", "cv_metrics.json")
    if folds_path.exists():
        cross_split = json.loads(folds_path.read_text())
    else:
        for fold in range(pipeline.cfg.split.cv_folds):
            train = corpus.subset(f"cv{fold}:train")
            test = corpus.subset(f"cv{fold}:test")
            distiller, _ = dl.train_distiller(
                bank.lookup([r.sample_id for r in train]),
                corpus.distributions(train),
                epochs=sched.epochs,
                batch_size=sched.batch_size,
                schedule=sched.lr_schedule(),
                seed=pipeline.cfg.teacher_seed,
                n_levels=pipeline.cfg.corpus.n_levels,
            )
            _, dists = dl.distiller_predict(
                distiller, bank.lookup([r.sample_id for r in test])
            )
            pred = np.array([mean_score(d) for d in dists])
            report = ev.metric_report(pred, corpus.scores(test))
            cross_split["srcc"].append(report.srcc)
            cross_split["plcc"].append(report.plcc)
            cross_split["acc"].append(report.acc)
        folds_path.write_text(json.dumps(cross_split, indent=2) + "\n")

    decompositions = {
        m: ev.variance_decomposition(same_split[m], cross_split[m])
        for m in ("srcc", "plcc", "acc")
    }
    records = []
    for m, rep in decompositions.items():
        records.extend(rep.as_records(metric=m))
    _report(
        pipeline,
        "variance",
        records,
        list(range(1000, 1000 + repeats)),
        protocol={
            "same_split_runs": repeats,
            "cv_folds": pipeline.cfg.split.cv_folds,
        },
    )
    reporting.figure_box(
        pipeline.path("reports", "fig_variance.png"),
        {
            "repeat runs": same_split["srcc"],
            "cv folds": cross_split["srcc"],
        },
        "SRCC",
        title="teacher spread: training randomness vs splits",
    )
    return decompositions


def cost_table(pipeline):
    """Per-stage multiply-accumulate accounting for the whole scheme."""
    cfg = pipeline.cfg
    size = cfg.corpus.image_size
    small = cfg.corpus.small_size
    stages = []
    records = []
    for b in cfg.backbones:
        model = pipeline.ensure_poc(b.name)
        report = ev.cost_estimate(model.backbone, (3, size, size))
        stages.append(
            ev.CostStage(
                f"extract_{b.name}", report.inference_macs, epochs=1, training=False
            )
        )
    distiller, _ = pipeline.ensure_teacher()
    d_report = ev.cost_estimate(distiller, (distiller.in_dim,))
    stages.append(
        ev.CostStage(
            "distiller_training",
            d_report.inference_macs,
            epochs=cfg.distiller_schedule.epochs,
            training=True,
        )
    )
    stages.append(ev.CostStage("knowledge_export", d_report.inference_macs))
    extra_total = ev.pipeline_cost(stages)

    student = dl.StudentModel(
        pipeline.student_spec(), n_levels=cfg.corpus.n_levels, input_resolution=small
    )
    s_report = ev.cost_estimate(student, (3, small, small))
    student_train = ev.CostStage(
        "student_training",
        s_report.inference_macs,
        epochs=cfg.student_schedule.epochs,
        training=True,
    )
    student_test = ev.CostStage("student_testing", s_report.inference_macs)

    rows = [
        {
            "stage": st.name,
            "macs_per_input": st.macs_per_input,
            "epochs": st.epochs,
            "training": st.training,
            "total": st.total,
        }
        for st in stages + [student_train, student_test]
    ]
    for st in stages + [student_train, student_test]:
        records.append(dict(metric="macs_total", value=float(st.total), n=1, run=st.name))
    records.append(dict(metric="extra_cost_total", value=float(extra_total), n=1))
    records.append(
        dict(
            metric="train_test_ratio",
            value=float(student_train.total / (student_test.total * cfg.student_schedule.epochs)),
            n=1,
        )
    )
    _report(pipeline, "cost", records, [0])
    reporting.write_table_csv(
        pipeline.path("reports", "cost.csv"),
        rows,
        ["stage", "macs_per_input", "epochs", "training", "total"],
    )
    return {
        "stages": rows,
        "extra_total": extra_total,
        "student_report": s_report,
        "distiller_report": d_report,
    }


# -- the ledger ----------------------------------------------------------------------------


def reproduce_tables(pipeline, progress=print):
    """Run every table analog and score the directional acceptance criteria."""
    t0 = time.time()
    ledger = []

    def check(criterion, name, passed, details):
        ledger.append(
            {
                "criterion": criterion,
                "name": name,
                "passed": bool(passed),
                "details": details,
            }
        )
        progress(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {name} — {details}")

    progress("== variance protocol (teacher repeats + cross-validation) ==")
    variance = variance_study(pipeline)
    delta_srcc = variance["srcc"].delta_training
    delta_acc = variance["acc"].delta_training
    check(
        10,
        "variance protocol reports",
        delta_srcc >= 0 and variance["srcc"].delta_exp >= 0,
        f"delta_training={delta_srcc:.4f}, delta_exp={variance['srcc'].delta_exp:.4f}, "
        f"delta_split={variance['srcc'].delta_split:.4f}",
    )

    progress("== teacher combinations (stacked-feature tables) ==")
    teacher_rows = teacher_combination_table(pipeline)
    full = {r["combo"]: r["srcc"] for r in teacher_rows if r["resolution"] == "full"}
    singles = {k: v for k, v in full.items() if "+" not in k}
    combined = full["+".join(b.name for b in pipeline.cfg.backbones)]

    progress("== core distillation ablation ==")
    kd_table = kd_ablation_table(pipeline)
    baseline_tr = kd_table["baseline_trainable"]["srcc"]
    baseline_fr = kd_table["baseline_frozen"]["srcc"]
    kd_tr = kd_table["kd_trainable"]["srcc"]
    kd_fr = kd_table["kd_frozen"]["srcc"]
    check(
        4,
        "distillation gain and cell ordering",
        (kd_tr - baseline_tr > delta_srcc)
        and (kd_tr > kd_fr > max(baseline_tr, baseline_fr))
        and (abs(baseline_tr - baseline_fr) <= delta_srcc),
        f"kd_tr={kd_tr:.3f} kd_fr={kd_fr:.3f} base_tr={baseline_tr:.3f} "
        f"base_fr={baseline_fr:.3f} delta={delta_srcc:.4f}",
    )

    check(
        6,
        "stacked features and teacher adequacy",
        (combined >= max(singles.values()) - delta_srcc)
        and (combined > baseline_tr + delta_srcc),
        f"combined={combined:.3f} best_single={max(singles.values()):.3f} "
        f"baseline={baseline_tr:.3f} delta={delta_srcc:.4f}",
    )

    progress("== loss-term ablation ==")
    terms = loss_term_table(pipeline)
    check(
        5,
        "both supervision terms contribute",
        (terms["feature_only"]["srcc"] - terms["none"]["srcc"] > delta_srcc)
        and (terms["output_only"]["srcc"] - terms["none"]["srcc"] > delta_srcc)
        and (terms["both"]["srcc"] >= terms["feature_only"]["srcc"])
        and (terms["both"]["srcc"] >= terms["output_only"]["srcc"]),
        ", ".join(f"{k}={v['srcc']:.3f}" for k, v in terms.items()),
    )

    progress("== feature matching ==")
    match = matching_table(pipeline)
    check(
        7,
        "distilled features match better than raw features",
        match["aesthetic"]["srcc"] - match["stacked_gsf"]["srcc"] > delta_srcc,
        f"aesthetic={match['aesthetic']['srcc']:.3f} "
        f"gsf={match['stacked_gsf']['srcc']:.3f} delta={delta_srcc:.4f}",
    )

    progress("== resolution adaptation ==")
    _, drops = resolution_table(pipeline)
    check(
        8,
        "distillation shrinks the resolution drop",
        drops["kd_drop"] < drops["baseline_drop"],
        f"kd_drop={drops['kd_drop']:.4f} baseline_drop={drops['baseline_drop']:.4f}",
    )

    progress("== subject localization ==")
    miou, _ = miou_study(pipeline)
    check(
        9,
        "distilled student localizes subjects better",
        miou["student_kd"]["miou"] > miou["student_no_kd"]["miou"],
        f"kd={miou['student_kd']['miou']:.3f} no_kd={miou['student_no_kd']['miou']:.3f}",
    )

    progress("== mixed supervision ==")
    mixed = mixed_supervision_table(pipeline)
    check(
        11,
        "mixing ground truth is within training noise",
        abs(mixed["mixed_loss"] - mixed["teacher_only"]) <= delta_srcc
        and abs(mixed["mixed_label"] - mixed["teacher_only"]) <= delta_srcc,
        ", ".join(f"{k}={v:.3f}" for k, v in mixed.items()) + f" delta={delta_srcc:.4f}",
    )

    progress("== task variants ==")
    tasks = task_variant_table(pipeline)
    check(
        12,
        "distillation helps classification and regression",
        (tasks["binary_kd"]["acc"] - tasks["binary_baseline"]["acc"] > delta_acc)
        and (tasks["regress_kd"]["srcc"] - tasks["regress_baseline"]["srcc"] > delta_srcc),
        f"binary {tasks['binary_baseline']['acc']:.3f}->{tasks['binary_kd']['acc']:.3f}, "
        f"regress {tasks['regress_baseline']['srcc']:.3f}->{tasks['regress_kd']['srcc']:.3f}",
    )

    progress("== semantic guidance strategies ==")
    guidance = semantic_guidance_table(pipeline)
    check(
        13,
        "distilled guidance beats explicit semantic labels",
        (guidance["kd"] >= guidance["multitask"] - delta_srcc)
        and (guidance["multitask"] >= guidance["baseline"] - delta_srcc),
        ", ".join(f"{k}={v:.3f}" for k, v in guidance.items()),
    )

    progress("== cost accounting ==")
    cost = cost_table(pipeline)
    ratio_ok = all(
        st["total"] == st["macs_per_input"] * st["epochs"] * (3 if st["training"] else 1)
        for st in cost["stages"]
    )
    check(
        15,
        "cost composition and train/test ratio",
        ratio_ok
        and cost["student_report"].training_macs_per_input
        == 3 * cost["student_report"].inference_macs,
        f"extra_total={cost['extra_total']:.3e} MACs, ratio=3",
    )

    ledger_report = {
        "config_hash": pipeline.hash,
        "elapsed_seconds": round(time.time() - t0, 1),
        "passed": sum(1 for e in ledger if e["passed"]),
        "failed": sum(1 for e in ledger if not e["passed"]),
        "entries": ledger,
    }
    path = pipeline.path("reports", "acceptance_ledger.json")
    path.write_text(json.dumps(ledger_report, indent=2) + "\n")
    progress(
        f"ledger: {ledger_report['passed']} passed, {ledger_report['failed']} failed "
        f"({ledger_report['elapsed_seconds']}s) -> {path}"
    )
    return ledger_report
