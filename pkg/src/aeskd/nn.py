"""Model building blocks on top of the autodiff engine.

Initialization follows fan-in-scaled uniform for weights, zeros for biases,
ones/zeros for batch-norm scale/shift.  Batch norm is expressed as a
composite of kernel ops so its backward pass needs no special casing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def init_rng(seed):
    return np.random.default_rng(seed)


def fan_in_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class: tracks parameters, buffers and train/eval mode."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield (prefix + name, value)
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        buffers = getattr(self, "_buffers", ())
        for name in buffers:
            yield (prefix + name, getattr(self, name))
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self):
        self.training = True
        for _, child in self._children():
            child.train()
        return self

    def eval(self):
        self.training = False
        for _, child in self._children():
            child.eval()
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        state = {f"param:{k}": np.array(v.data) for k, v in self.named_parameters()}
        state.update(
            {f"buffer:{k}": np.array(v) for k, v in self.named_buffers()}
        )
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for key, value in state.items():
            kind, _, name = key.partition(":")
            if kind == "param":
                if name not in params:
                    raise KeyError(f"unknown parameter in checkpoint: {name}")
                if params[name].data.shape != value.shape:
                    raise ValueError(
                        f"shape mismatch for {name}: model {params[name].data.shape},"
                        f" checkpoint {value.shape}"
                    )
                params[name].data = value.astype(params[name].data.dtype)
            elif kind == "buffer":
                if name not in buffers:
                    raise KeyError(f"unknown buffer in checkpoint: {name}")
                self._set_buffer(name, value)
            else:
                raise ValueError(f"bad checkpoint key: {key}")

    def _set_buffer(self, dotted, value):
        obj = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        existing = getattr(obj, parts[-1])
        setattr(obj, parts[-1], value.astype(existing.dtype))

    def inference_macs(self, input_shape):
        """Multiply-accumulate count for one forward pass; 0 by default."""
        return 0


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            fan_in_uniform(rng, (in_features, out_features), in_features, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return ad.matmul(x, self.weight) + self.bias

    def inference_macs(self, input_shape):
        return self.in_features * self.out_features


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, stride=1, ksize=3, bias=True,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * ksize * ksize
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.ksize = ksize
        self.padding = ksize // 2
        self.weight = Tensor(
            fan_in_uniform(rng, (out_channels, in_channels, ksize, ksize), fan_in, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def output_hw(self, h, w):
        ho = (h + 2 * self.padding - self.ksize) // self.stride + 1
        wo = (w + 2 * self.padding - self.ksize) // self.stride + 1
        return ho, wo

    def inference_macs(self, input_shape):
        _, h, w = input_shape
        ho, wo = self.output_hw(h, w)
        return self.out_channels * self.in_channels * self.ksize * self.ksize * ho * wo


class BatchNorm(Module):
    """Batch normalization over (N, F) or (N, C, H, W) inputs.

    Training mode normalizes with batch statistics and updates running
    statistics; inference mode uses the running statistics.
    """

    def __init__(self, num_features, momentum=BN_MOMENTUM, eps=BN_EPS, dtype=np.float32):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self._buffers = ("running_mean", "running_var")

    def forward(self, x):
        nd = x.data.ndim
        if nd == 2:
            axes = (0,)
        elif nd == 4:
            axes = (0, 2, 3)
        else:
            raise ValueError(f"batch norm expects 2-D or 4-D input, got {x.data.shape}")
        if x.data.shape[1] != self.num_features:
            raise ValueError(
                f"batch norm feature mismatch: got {x.data.shape[1]}, expected {self.num_features}"
            )
        if self.training:
            out, mu, var = ad.batch_norm(x, self.gamma, self.beta, axes, self.eps)
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1 - m) * mu).astype(
                self.running_mean.dtype
            )
            self.running_var = (m * self.running_var + (1 - m) * var).astype(
                self.running_var.dtype
            )
            return out
        return ad.batch_norm_inference(
            x, self.gamma, self.beta, self.running_mean, self.running_var, axes, self.eps
        )


def relu(x):
    return ad.relu(x)


def gradients(module):
    """Named gradient arrays after a backward pass."""
    out = {}
    for name, p in module.named_parameters():
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient; run backward() first")
        out[name] = np.array(p.grad)
    return out


def assert_finite(tensor, context):
    if not np.isfinite(tensor.data).all():
        raise FloatingPointError(f"non-finite values in {context}")
    return tensor
