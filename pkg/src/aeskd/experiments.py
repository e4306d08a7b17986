"""Pipeline orchestration: stages, cached artifacts, and the table analogs.

Every stage writes its artifacts under the output directory with a stamp
of the config sections it depends on, so re-runs reuse what exists and a
changed config rebuilds exactly the affected stages.  Student runs are
independent jobs and fan out over a process pool.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import distillation as dl
from . import evaluation as ev
from . import fileformats as ff
from . import reporting, synthcorpus as sc
from .backbones import (
    BackboneSpec,
    PocClassifier,
    activation_map,
    build_feature_bank,
    pretrain_poc,
)
from .config import ExperimentConfig
from .synthcorpus import Corpus, CorpusConfig, SplitSpec

PRODUCERS = {
    "corpus": "gen-corpus",
    "poc": "pretrain-poc",
    "features": "extract-gsf",
    "teacher": "train-distiller",
    "cache": "export-knowledge",
    "run": "train-student",
}

PLEASANT_SCORE = 6.5  # aesthetically-pleasant cut for the subject study


class MissingArtifact(RuntimeError):
    def __init__(self, what, producer):
        super().__init__(
            f"missing {what}; produce it first with the `{producer}` command"
        )
        self.category = "missing-artifact"


@dataclass
class RunSpec:
    """One student training job."""

    mode: str = "baseline"
    seed: int = 0
    resolution: str = "small"     # small | full
    frozen: bool = False
    supervise_features: bool = True
    supervise_outputs: bool = True
    epochs: int | None = None

    def key(self):
        parts = [self.mode, f"r{self.resolution}", f"s{self.seed}"]
        if self.frozen:
            parts.append("frozen")
        if self.mode == "kd" and not self.supervise_features:
            parts.append("nofeat")
        if self.mode == "kd" and not self.supervise_outputs:
            parts.append("noout")
        if self.epochs is not None:
            parts.append(f"e{self.epochs}")
        return "_".join(parts)

    def training_mode(self):
        return dl.TrainingMode(
            mode=self.mode,
            frozen_backbone=self.frozen,
            supervise_features=self.supervise_features,
            supervise_outputs=self.supervise_outputs,
        )


def _stage_hash(*parts):
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Pipeline:
    def __init__(self, config, out_dir):
        self.cfg = config
        self.out = Path(out_dir)
        self.hash = config.config_hash()
        self._corpus = None
        self._poc = {}

    # -- plumbing -----------------------------------------------------------------

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def prepare(self):
        self.cfg.to_json(self.path("config.json"))
        return self

    def _stamp_ok(self, stamp_path, stage_hash):
        if not stamp_path.exists():
            return False
        try:
            return json.loads(stamp_path.read_text())["stage_hash"] == stage_hash
        except (json.JSONDecodeError, KeyError):
            return False

    def _write_stamp(self, stamp_path, stage_hash):
        stamp_path.write_text(json.dumps({"stage_hash": stage_hash}) + "\n")

    # -- corpus -------------------------------------------------------------------

    def _corpus_hash(self):
        return _stage_hash(asdict(self.cfg.corpus), asdict(self.cfg.split))

    def ensure_corpus(self):
        if self._corpus is not None:
            return self._corpus
        root = self.out / "corpus"
        stamp = self.path("corpus", "stamp.json")
        if not self._stamp_ok(stamp, self._corpus_hash()):
            cs = self.cfg.corpus
            corpus = sc.generate_corpus(
                CorpusConfig(
                    n_samples=cs.n_samples,
                    image_size=cs.image_size,
                    small_size=cs.small_size,
                    n_levels=cs.n_levels,
                    sigma=cs.sigma,
                    mask_fraction=tuple(cs.mask_fraction),
                    max_distractors=cs.max_distractors,
                    background_noise=cs.background_noise,
                    seed=cs.seed,
                ),
                root,
            )
            sp = self.cfg.split
            sc.make_splits(
                corpus.records,
                SplitSpec("fixed", sp.train_size, sp.test_size, seed=sp.seed),
            )
            sc.make_splits(
                corpus.records, SplitSpec("cross_validation", folds=sp.cv_folds, seed=sp.seed)
            )
            sc.write_manifest(root / "manifest.jsonl", corpus.records)
            self._write_stamp(stamp, self._corpus_hash())
            self._corpus = corpus
        else:
            self._corpus = Corpus.load(root)
        return self._corpus

    def require_corpus(self):
        if not (self.out / "corpus" / "manifest.jsonl").exists():
            raise MissingArtifact("the synthetic corpus", PRODUCERS["corpus"])
        return self.ensure_corpus()

    def resolution_px(self, resolution):
        return self.cfg.corpus.image_size if resolution == "full" else self.cfg.corpus.small_size

    # -- backbones ------------------------------------------------------------------

    def _poc_hash(self, bcfg):
        return _stage_hash(asdict(bcfg), self.cfg.corpus.image_size)

    def ensure_poc(self, name):
        if name in self._poc:
            return self._poc[name]
        bcfg = self.cfg.backbone(name)
        ckpt = self.path("poc", f"{name}.ckpt")
        meta = self.path("poc", f"{name}.json")
        stamp = self.path("poc", f"{name}.stamp.json")
        n_classes = len(bcfg.families) * sc.N_STYLES
        spec = BackboneSpec(tuple(bcfg.stage_channels), input_resolution=self.cfg.corpus.image_size)
        if self._stamp_ok(stamp, self._poc_hash(bcfg)):
            model = PocClassifier(spec, n_classes, seed=bcfg.seed)
            model.load_state_dict(ff.read_checkpoint(ckpt))
            model.eval()
        else:
            images, labels, _ = sc.generate_class_corpus(
                tuple(bcfg.families),
                bcfg.samples_per_class,
                image_size=self.cfg.corpus.image_size,
                noise_scale=bcfg.noise_scale,
                seed=bcfg.seed,
            )
            model, history = pretrain_poc(
                spec,
                images,
                labels,
                n_classes,
                epochs=bcfg.pretrain_epochs,
                batch_size=bcfg.pretrain_batch,
                seed=bcfg.seed,
            )
            ff.write_checkpoint(ckpt, model.state_dict())
            meta.write_text(json.dumps(history, indent=2) + "\n")
            self._write_stamp(stamp, self._poc_hash(bcfg))
            model.eval()
        self._poc[name] = model
        return model

    def require_poc(self, name):
        if not (self.out / "poc" / f"{name}.ckpt").exists():
            raise MissingArtifact(f"pre-trained backbone {name!r}", PRODUCERS["poc"])
        return self.ensure_poc(name)

    def student_spec(self):
        bcfg = self.cfg.backbone(self.cfg.student_backbone)
        return BackboneSpec(tuple(bcfg.stage_channels))

    def pretrained_student_backbone(self, seed):
        """Student backbone initialized from its POC pre-training."""
        poc = self.ensure_poc(self.cfg.student_backbone)
        return poc.backbone, seed

    # -- features ---------------------------------------------------------------------

    def _features_hash(self, name, resolution):
        return _stage_hash(
            self._poc_hash(self.cfg.backbone(name)), self._corpus_hash(), resolution
        )

    def bank_path(self, name, resolution):
        return self.path("features", f"{name}_{resolution}.gsf")

    def ensure_bank(self, name, resolution="full"):
        path = self.bank_path(name, resolution)
        stamp = self.path("features", f"{name}_{resolution}.stamp.json")
        if self._stamp_ok(stamp, self._features_hash(name, resolution)):
            return ff.read_feature_bank(path)
        corpus = self.ensure_corpus()
        model = self.ensure_poc(name)
        size = self.resolution_px(resolution)
        images = corpus.load_batch(corpus.records, size=size)
        bank = build_feature_bank(model, images, [r.sample_id for r in corpus.records])
        ff.write_feature_bank(path, bank)
        self._write_stamp(stamp, self._features_hash(name, resolution))
        return bank

    def require_bank(self, name, resolution="full"):
        if not self.bank_path(name, resolution).exists():
            raise MissingArtifact(
                f"feature bank {name}/{resolution}", PRODUCERS["features"]
            )
        return self.ensure_bank(name, resolution)

    def combined_bank(self, names, resolution="full"):
        banks = [self.ensure_bank(n, resolution) for n in names]
        ids = banks[0].ids
        for b in banks[1:]:
            if not np.array_equal(b.ids, ids):
                raise ValueError("feature banks disagree on sample ids")
        feats = np.concatenate([b.features for b in banks], axis=1)
        return ff.FeatureBank(ids=ids.copy(), features=feats)

    # -- teacher ------------------------------------------------------------------------

    def _teacher_hash(self, names, resolution, seed):
        return _stage_hash(
            [self._features_hash(n, resolution) for n in names],
            asdict(self.cfg.distiller_schedule),
            seed,
        )

    def teacher_key(self, names, resolution, seed):
        return f"{''.join(names)}_{resolution}_s{seed}"

    def ensure_teacher(self, names=None, resolution=None, seed=None, persist=True):
        """Train (or reload) a distiller on the combined bank; returns
        (distiller, metrics dict)."""
        names = tuple(names) if names else tuple(b.name for b in self.cfg.backbones)
        resolution = resolution or self.cfg.feature_resolution
        seed = self.cfg.teacher_seed if seed is None else seed
        key = self.teacher_key(names, resolution, seed)
        ckpt = self.path("teacher", f"{key}.ckpt")
        meta = self.path("teacher", f"{key}.json")
        stamp = self.path("teacher", f"{key}.stamp.json")
        bank = self.combined_bank(names, resolution)
        corpus = self.ensure_corpus()
        if persist and self._stamp_ok(stamp, self._teacher_hash(names, resolution, seed)):
            distiller = dl.KnowledgeDistiller(
                bank.dim, n_levels=self.cfg.corpus.n_levels, seed=seed
            )
            distiller.load_state_dict(ff.read_checkpoint(ckpt))
            distiller.eval()
            return distiller, json.loads(meta.read_text())
        train, test = corpus.subset("train"), corpus.subset("test")
        sched = self.cfg.distiller_schedule
        distiller, history = dl.train_distiller(
            bank.lookup([r.sample_id for r in train]),
            corpus.distributions(train),
            epochs=sched.epochs,
            batch_size=sched.batch_size,
            schedule=sched.lr_schedule(),
            seed=seed,
            n_levels=self.cfg.corpus.n_levels,
        )
        _, test_dists = dl.distiller_predict(distiller, bank.lookup([r.sample_id for r in test]))
        from .ratings import mean_score

        pred_scores = np.array([mean_score(d) for d in test_dists])
        report = ev.metric_report(
            pred_scores,
            corpus.scores(test),
            test_dists,
            corpus.distributions(test),
        )
        metrics = {
            "srcc": report.srcc,
            "plcc": report.plcc,
            "acc": report.acc,
            "mean_emd": report.mean_emd,
            "names": list(names),
            "resolution": resolution,
            "seed": seed,
            "history": history,
        }
        if persist:
            ff.write_checkpoint(ckpt, distiller.state_dict())
            meta.write_text(json.dumps(metrics, indent=2) + "\n")
            self._write_stamp(stamp, self._teacher_hash(names, resolution, seed))
        return distiller, metrics

    def require_teacher(self):
        names = tuple(b.name for b in self.cfg.backbones)
        key = self.teacher_key(names, self.cfg.feature_resolution, self.cfg.teacher_seed)
        if not (self.out / "teacher" / f"{key}.ckpt").exists():
            raise MissingArtifact("the trained knowledge distiller", PRODUCERS["teacher"])
        return self.ensure_teacher()

    # -- teacher knowledge cache -----------------------------------------------------------

    def cache_path(self):
        return self.path("teacher", "cache.tk")

    def ensure_cache(self):
        names = tuple(b.name for b in self.cfg.backbones)
        stamp = self.path("teacher", "cache.stamp.json")
        chash = _stage_hash(
            self._teacher_hash(names, self.cfg.feature_resolution, self.cfg.teacher_seed)
        )
        if self._stamp_ok(stamp, chash) and self.cache_path().exists():
            return ff.read_knowledge_cache(self.cache_path())
        distiller, _ = self.ensure_teacher()
        corpus = self.ensure_corpus()
        bank = self.combined_bank(names, self.cfg.feature_resolution)
        train_ids = {r.sample_id for r in corpus.subset("train")}
        rows = [i for i, sid in enumerate(bank.ids) if int(sid) in train_ids]
        train_bank = ff.FeatureBank(ids=bank.ids[rows], features=bank.features[rows])
        records = dl.distill_knowledge(distiller, train_bank)
        ff.write_knowledge_cache(self.cache_path(), records)
        self._write_stamp(stamp, chash)
        return records

    def require_cache(self):
        if not self.cache_path().exists():
            raise MissingArtifact("the teacher-knowledge cache", PRODUCERS["cache"])
        return ff.read_knowledge_cache(self.cache_path())

    def teacher_gate(self):
        """The adequacy criterion: teacher SRCC must beat the student baseline."""
        _, teacher = self.ensure_teacher()
        baseline = self.ensure_run(RunSpec(mode="baseline", seed=self.cfg.student_seeds[0]))
        gate = {
            "teacher_srcc": teacher["srcc"],
            "student_baseline_srcc": baseline["metrics"]["srcc"],
            "adequate": teacher["srcc"] > baseline["metrics"]["srcc"],
        }
        self.path("reports", "teacher_gate.json").write_text(
            json.dumps(gate, indent=2) + "\n"
        )
        if not gate["adequate"]:
            raise RuntimeError(
                "teacher adequacy gate failed: distiller SRCC "
                f"{teacher['srcc']:.3f} <= student baseline {baseline['metrics']['srcc']:.3f}"
            )
        return gate

    # -- student runs ------------------------------------------------------------------------

    def _run_hash(self, spec):
        names = tuple(b.name for b in self.cfg.backbones)
        deps = [asdict(self.cfg.student_schedule), self._corpus_hash(), asdict(spec)]
        mode = spec.training_mode()
        if mode.needs_cache:
            deps.append(
                self._teacher_hash(names, self.cfg.feature_resolution, self.cfg.teacher_seed)
            )
        deps.append(self._poc_hash(self.cfg.backbone(self.cfg.student_backbone)))
        return _stage_hash(*deps)

    def run_paths(self, spec):
        key = spec.key()
        return self.path("runs", f"{key}.json"), self.path("runs", f"{key}.ckpt")

    def _build_student(self, spec, corpus):
        mode = spec.training_mode()
        student = dl.StudentModel(
            self.student_spec(),
            n_levels=self.cfg.corpus.n_levels,
            head=mode.head,
            input_resolution=self.resolution_px(spec.resolution),
            with_semantic_input=(spec.mode == "multimodal"),
            with_semantic_head=(spec.mode == "multitask"),
            seed=spec.seed,
        )
        # the student's backbone starts from its classification pre-training,
        # standing in for an off-the-shelf pre-trained backbone
        poc = self.ensure_poc(self.cfg.student_backbone)
        backbone_state = {
            k: v for k, v in poc.backbone.state_dict().items()
        }
        student.backbone.load_state_dict(backbone_state)
        return student

    def ensure_run(self, spec):
        meta_path, ckpt_path = self.run_paths(spec)
        rhash = self._run_hash(spec)
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            if meta.get("run_hash") == rhash:
                return meta
        corpus = self.ensure_corpus()
        mode = spec.training_mode()
        cache = self.ensure_cache() if mode.needs_cache else None
        student = self._build_student(spec, corpus)
        sched = self.cfg.student_schedule
        epochs = sched.epochs if spec.epochs is None else spec.epochs
        train = corpus.subset("train")
        student, history = dl.train_student(
            student,
            corpus,
            train,
            mode,
            cache=cache,
            epochs=epochs,
            batch_size=sched.batch_size,
            schedule=sched.lr_schedule(),
            seed=spec.seed,
        )
        metrics = self.evaluate_student(student, spec)
        meta = {
            "key": spec.key(),
            "spec": asdict(spec),
            "metrics": metrics,
            "history": history,
            "run_hash": rhash,
            "config_hash": self.hash,
        }
        ff.write_checkpoint(ckpt_path, student.state_dict())
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
        return meta

    def require_run(self, spec):
        meta_path, _ = self.run_paths(spec)
        if not meta_path.exists():
            raise MissingArtifact(f"student run {spec.key()}", PRODUCERS["run"])
        return json.loads(meta_path.read_text())

    def load_student(self, spec):
        meta_path, ckpt_path = self.run_paths(spec)
        if not ckpt_path.exists():
            raise MissingArtifact(f"student run {spec.key()}", PRODUCERS["run"])
        corpus = self.ensure_corpus()
        student = self._build_student(spec, corpus)
        student.load_state_dict(ff.read_checkpoint(ckpt_path))
        student.eval()
        return student

    def evaluate_student(self, student, spec):
        corpus = self.ensure_corpus()
        test = corpus.subset("test")
        pred = dl.predict_student(student, corpus, test)
        gt_scores = corpus.scores(test)
        categories = [r.category for r in test]
        if student.head_kind == "binary":
            report = ev.metric_report(pred["scores"], gt_scores, categories=categories)
            acc = ev.binary_accuracy(pred["probabilities"], gt_scores)
            metrics = {
                "srcc": report.srcc,
                "plcc": report.plcc,
                "acc": acc,
                "mean_emd": None,
            }
        else:
            report = ev.metric_report(
                pred["scores"],
                gt_scores,
                pred.get("distributions"),
                corpus.distributions(test) if "distributions" in pred else None,
                categories=categories,
            )
            metrics = {
                "srcc": report.srcc,
                "plcc": report.plcc,
                "acc": report.acc,
                "mean_emd": report.mean_emd,
            }
        metrics["per_category"] = report.per_category
        metrics["n"] = report.n
        return metrics

    def ensure_runs(self, specs, parallel=None):
        """Build any missing runs, fanning independent jobs over processes."""
        specs = list(specs)
        missing = []
        for spec in specs:
            meta_path, _ = self.run_paths(spec)
            if not meta_path.exists() or json.loads(meta_path.read_text()).get(
                "run_hash"
            ) != self._run_hash(spec):
                missing.append(spec)
        if missing:
            needs_cache = any(s.training_mode().needs_cache for s in missing)
            self.ensure_corpus()
            self.ensure_poc(self.cfg.student_backbone)
            if needs_cache:
                self.ensure_cache()
            workers = self.cfg.max_workers if parallel is None else parallel
            if workers and workers > 1 and len(missing) > 1:
                cfg_dict = self.cfg.to_dict()
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    futures = [
                        pool.submit(_run_job, cfg_dict, str(self.out), asdict(spec))
                        for spec in missing
                    ]
                    for fut in futures:
                        fut.result()
            else:
                for spec in missing:
                    self.ensure_run(spec)
        return {spec.key(): self.ensure_run(spec) for spec in specs}


def _run_job(cfg_dict, out_dir, spec_dict):
    pipeline = Pipeline(ExperimentConfig.from_dict(cfg_dict), out_dir)
    return pipeline.ensure_run(RunSpec(**spec_dict))["key"]
