"""Convolutional backbones standing in for pre-trained classification models.

Each backbone stage is conv3x3 -> batch norm -> relu -> stride-2 conv ->
batch norm -> relu; the per-stage maps feed multi-level pooling (global
average per stage, concatenated), so pooled width equals the sum of stage
channels regardless of input resolution.  Diversity across the roster comes
from width and from which pattern classes each backbone was pre-trained on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad, nn
from .autodiff import Tensor
from .fileformats import FeatureBank
from .optim import Adam, LrSchedule


@dataclass
class BackboneSpec:
    stage_channels: tuple = (8, 16, 32)
    in_channels: int = 3
    input_resolution: int = 64

    def __post_init__(self):
        if len(self.stage_channels) < 2:
            raise ValueError("backbones need at least 2 stages")
        if any(c <= 0 for c in self.stage_channels):
            raise ValueError("stage widths must be positive")

    @property
    def pooled_width(self):
        return int(sum(self.stage_channels))


class BackboneStage(nn.Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        # batch norm supplies the shift, so the convs skip their biases
        self.conv1 = nn.Conv2d(cin, cout, stride=1, bias=False, rng=rng)
        self.bn1 = nn.BatchNorm(cout)
        self.conv2 = nn.Conv2d(cout, cout, stride=2, bias=False, rng=rng)
        self.bn2 = nn.BatchNorm(cout)

    def forward(self, x):
        x = ad.relu(self.bn1(self.conv1(x)))
        return ad.relu(self.bn2(self.conv2(x)))

    def inference_macs(self, input_shape):
        c, h, w = input_shape
        macs = self.conv1.inference_macs((c, h, w))
        ho, wo = self.conv1.output_hw(h, w)
        macs += self.conv2.inference_macs((self.conv1.out_channels, ho, wo))
        return macs

    def output_shape(self, input_shape):
        _, h, w = input_shape
        ho, wo = self.conv1.output_hw(h, w)
        ho, wo = self.conv2.output_hw(ho, wo)
        return (self.conv2.out_channels, ho, wo)


class Backbone(nn.Module):
    """Stage stack returning one spatial feature map per stage."""

    def __init__(self, spec, seed=0):
        super().__init__()
        rng = nn.init_rng(seed)
        self.spec = spec
        self.stages = []
        cin = spec.in_channels
        for cout in spec.stage_channels:
            self.stages.append(BackboneStage(cin, cout, rng))
            cin = cout

    def forward(self, x):
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def inference_macs(self, input_shape):
        macs, shape = 0, input_shape
        for stage in self.stages:
            macs += stage.inference_macs(shape)
            shape = stage.output_shape(shape)
        return macs


class PocClassifier(nn.Module):
    """Backbone plus global-average-pool -> linear -> softmax head."""

    def __init__(self, spec, n_classes, seed=0):
        super().__init__()
        if n_classes < 2:
            raise ValueError("classification head needs at least 2 classes")
        self.backbone = Backbone(spec, seed=seed)
        rng = nn.init_rng(seed + 1)
        self.head = nn.Linear(spec.stage_channels[-1], n_classes, rng=rng)
        self.n_classes = n_classes

    def forward(self, x):
        maps = self.backbone(x)
        logits = self.head(ad.global_avg_pool(maps[-1]))
        return ad.softmax(logits, axis=-1)

    def inference_macs(self, input_shape):
        macs = self.backbone.inference_macs(input_shape)
        return macs + self.head.inference_macs(None)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of integer labels under row distributions."""
    n = probs.data.shape[0]
    onehot = np.zeros(probs.data.shape, dtype=probs.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    p = ad.clip(probs, 1e-7, 1.0)
    return -ad.mean(ad.tsum(Tensor(onehot) * ad.log(p), axis=-1))


def pretrain_poc(spec, images, labels, n_classes, epochs=8, batch_size=32,
                 schedule=None, seed=0):
    """Cross-entropy pre-training of a backbone on the pattern classes.

    Returns (classifier, history) where history carries per-epoch training
    loss and final training accuracy.  Zero epochs returns the initialized
    model unchanged.
    """
    if n_classes < 2:
        raise ValueError("pre-training needs a corpus with at least 2 classes")
    model = PocClassifier(spec, n_classes, seed=seed)
    schedule = schedule if schedule is not None else LrSchedule(initial=1e-3)
    opt = Adam(model.parameters(), schedule)
    rng = np.random.default_rng(seed + 7)
    n = images.shape[0]
    history = {"epoch_loss": [], "train_accuracy": None}
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            probs = model(Tensor(images[idx]))
            loss = cross_entropy(probs, labels[idx])
            model.zero_grad()
            loss.backward()
            opt.step(epoch=epoch)
            total += loss.item() * len(idx)
        history["epoch_loss"].append(total / n)
    history["train_accuracy"] = classification_accuracy(model, images, labels)
    return model, history


def classification_accuracy(model, images, labels, batch_size=64):
    model.eval()
    correct = 0
    with ad.no_grad():
        for start in range(0, images.shape[0], batch_size):
            probs = model(Tensor(images[start : start + batch_size]))
            correct += int((probs.data.argmax(axis=1) == labels[start : start + batch_size]).sum())
    model.train()
    return correct / images.shape[0]


# -- pooling and stacking --------------------------------------------------------------


def mlsp_pool(stage_maps):
    """Global average pool per stage, concatenated in stage order.

    Output width is the sum of stage channel counts; resolution drops out,
    so full- and reduced-resolution inputs pool to the same width.
    """
    if not stage_maps:
        raise ValueError("mlsp_pool needs at least one stage map")
    pooled = [ad.global_avg_pool(m) for m in stage_maps]
    return ad.concat(pooled, axis=1) if len(pooled) > 1 else pooled[0]


def combine_gsf(pooled_vectors):
    """Concatenate pooled features from K backbones in roster order."""
    if len(pooled_vectors) == 0:
        raise ValueError("combine_gsf needs at least one feature vector")
    if len(pooled_vectors) == 1:
        return pooled_vectors[0]
    if isinstance(pooled_vectors[0], Tensor):
        return ad.concat(pooled_vectors, axis=-1)
    return np.concatenate(pooled_vectors, axis=-1)


def extract_gsf(model, images, batch_size=64):
    """Inference-mode pooled features for a batch of images.

    ``model`` may be a Backbone or a PocClassifier (whose backbone is
    used).  Deterministic: batch norm uses running statistics and results
    are independent of batch composition.
    """
    backbone = getattr(model, "backbone", model)
    was_training = backbone.training
    backbone.eval()
    chunks = []
    with ad.no_grad():
        for start in range(0, images.shape[0], batch_size):
            maps = backbone(Tensor(images[start : start + batch_size]))
            chunks.append(mlsp_pool(maps).data)
    if was_training:
        backbone.train()
    return np.concatenate(chunks, axis=0)


def build_feature_bank(model, images, sample_ids, batch_size=64):
    feats = extract_gsf(model, images, batch_size=batch_size)
    return FeatureBank(ids=np.asarray(sample_ids, dtype=np.uint64), features=feats)


# -- activation maps ----------------------------------------------------------------


def upsample_nearest(plane, out_h, out_w):
    in_h, in_w = plane.shape
    ys = np.clip(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(int), 0, in_h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(int), 0, in_w - 1)
    return plane[np.ix_(ys, xs)]


def activation_map(model, image):
    """Channel-mean of the last-stage activations, upsampled to image size.

    Post-ReLU activations keep the map non-negative.  Accepts one image
    (3, H, W) and returns an (H, W) map.
    """
    backbone = getattr(model, "backbone", model)
    was_training = backbone.training
    backbone.eval()
    with ad.no_grad():
        maps = backbone(Tensor(image[None]))
    if was_training:
        backbone.train()
    last = maps[-1].data[0]
    cam = last.mean(axis=0)
    return upsample_nearest(cam, image.shape[-2], image.shape[-1])
