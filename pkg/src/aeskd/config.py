"""Experiment configuration: one JSON-serializable tree with explicit seeds.

The default values are the desk-scale schedule (12 epochs, batch 16 for
students and 128 for the distiller, rate 1e-3 divided by 10 every 3
epochs).  ``paper_preset`` swaps in the full-scale rates (3e-5, batch
512/16) while keeping the decay shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .optim import LrSchedule


@dataclass
class ScheduleConfig:
    epochs: int = 12
    batch_size: int = 16
    learning_rate: float = 1e-3
    decay: float = 0.1
    decay_interval: int = 3

    def lr_schedule(self):
        return LrSchedule(self.learning_rate, self.decay, self.decay_interval)


@dataclass
class BackboneConfig:
    name: str
    stage_channels: list
    families: list
    samples_per_class: int = 100
    noise_scale: float = 1.0
    pretrain_epochs: int = 8
    pretrain_batch: int = 32
    seed: int = 0


@dataclass
class CorpusSection:
    n_samples: int = 2400
    image_size: int = 64
    small_size: int = 32
    n_levels: int = 10
    sigma: float = 1.0
    mask_fraction: list = field(default_factory=lambda: [0.10, 0.30])
    max_distractors: int = 3
    background_noise: float = 0.03
    seed: int = 7


@dataclass
class SplitSection:
    train_size: int = 2000
    test_size: int = 400
    cv_folds: int = 12
    seed: int = 13


ALL_FAMILIES = ["circle", "cross", "stripes", "checkerboard", "blob", "ring"]


def _default_roster():
    return [
        BackboneConfig("a", [8, 16, 32], ["circle", "cross"], seed=101),
        BackboneConfig("b", [16, 32, 64], ["circle", "cross", "stripes", "checkerboard"], seed=102),
        BackboneConfig("c", [24, 48, 96], list(ALL_FAMILIES), noise_scale=2.0, seed=103),
    ]


@dataclass
class ExperimentConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    split: SplitSection = field(default_factory=SplitSection)
    backbones: list = field(default_factory=_default_roster)
    student_backbone: str = "a"
    feature_resolution: str = "full"          # teacher extraction resolution
    distiller_schedule: ScheduleConfig = field(
        default_factory=lambda: ScheduleConfig(batch_size=128)
    )
    student_schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    teacher_seed: int = 0
    student_seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    variance_repeats: int = 10
    max_workers: int = 2

    def backbone(self, name):
        for b in self.backbones:
            if b.name == name:
                return b
        raise KeyError(f"no backbone named {name!r} in the roster")

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "corpus" in data:
            data["corpus"] = CorpusSection(**data["corpus"])
        if "split" in data:
            data["split"] = SplitSection(**data["split"])
        if "backbones" in data:
            data["backbones"] = [BackboneConfig(**b) for b in data["backbones"]]
        for key in ("distiller_schedule", "student_schedule"):
            if key in data:
                data[key] = ScheduleConfig(**data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def paper_preset(cls):
        """Full-scale learning rates and batch sizes; desk corpus unchanged."""
        cfg = cls()
        cfg.distiller_schedule = ScheduleConfig(batch_size=512, learning_rate=3e-5)
        cfg.student_schedule = ScheduleConfig(batch_size=16, learning_rate=3e-5)
        return cfg
