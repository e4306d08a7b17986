"""Dense-tensor compute graph with reverse-mode differentiation.

The kernel op set is deliberately small: add, mul, matmul, conv2d (3x3,
stride 1 or 2, zero padding), relu, global average pool, softmax, cumsum,
mean, sum, sqrt, square, abs, concat, plus the pointwise helpers (div, log,
exp, sigmoid, clip) needed by the loss heads.  Cumulative sum is a first
class op so the earth-mover loss stays a differentiable composite.

Storage is float32 by default; gradient checks build float64 graphs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "mul",
    "div",
    "matmul",
    "conv2d",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "softmax",
    "cumsum",
    "mean",
    "tsum",
    "batch_norm",
    "batch_norm_inference",
    "sqrt",
    "square",
    "absval",
    "concat",
    "global_avg_pool",
    "reshape",
    "clip",
    "finite_difference_gradient",
    "check_gradients",
]

_GRAD_ENABLED = True

# Guard for sqrt'(x) = 1/(2 sqrt(x)) at x == 0: losses like the EMD are
# norms whose inner term sits exactly at its minimum there, so the correct
# composite (sub)gradient is 0, which the guard preserves.
_SQRT_GUARD = 1e-12


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """A dense array node in the compute graph.

    ``data`` is a numpy array (row-major).  Non-leaf tensors remember their
    parents and a closure that scatters the incoming adjoint to them.
    """

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "_parents",
        "_backward",
        "_grad_borrowed",
        "name",
    )

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        if isinstance(data, Tensor):
            raise TypeError("Tensor data must be an array, not a Tensor")
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self._grad_borrowed = False
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._non_scalar()

    def _non_scalar(self):
        raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None
        self._grad_borrowed = False

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from this node; requires a scalar."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss node, got shape {self.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_lift(other, self.dtype), _const(-1.0, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), mul(self, _const(-1.0, self.dtype)))

    def __neg__(self):
        return mul(self, _const(-1.0, self.dtype))

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _const(v, dtype):
    return Tensor(np.asarray(v, dtype=dtype))


def _accumulate(t, g):
    if not t.requires_grad and t._backward is None and not t._parents:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        # borrow the adjoint without copying; materialize only if a second
        # contribution arrives (fanout > 1), since borrowed arrays may be
        # shared with sibling accumulations or be read-only views
        t.grad = g
        t._grad_borrowed = True
    elif t._grad_borrowed:
        t.grad = t.grad + g
        t._grad_borrowed = False
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum an adjoint over the axes numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward, name):
    if _GRAD_ENABLED and any(
        p.requires_grad or p._parents for p in parents
    ):
        out = Tensor(data, requires_grad=False, parents=tuple(parents), backward=backward, name=name)
        return out
    return Tensor(data, name=name)


# -- elementwise and reduction ops --------------------------------------------


def add(a, b):
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(out_data, (a, b), backward, "add")


def mul(a, b):
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(out_data, (a, b), backward, "mul")


def div(a, b):
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _node(out_data, (a, b), backward, "div")


def relu(x):
    out_data = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _node(out_data, (x,), backward, "relu")


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _node(out_data, (x,), backward, "sigmoid")


def log(x):
    out_data = np.log(x.data)

    def backward(g):
        _accumulate(x, g / x.data)

    return _node(out_data, (x,), backward, "log")


def exp(x):
    out_data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * out_data)

    return _node(out_data, (x,), backward, "exp")


def sqrt(x):
    out_data = np.sqrt(x.data)

    def backward(g):
        _accumulate(x, g * 0.5 / np.maximum(out_data, _SQRT_GUARD))

    return _node(out_data, (x,), backward, "sqrt")


def square(x):
    out_data = x.data * x.data

    def backward(g):
        _accumulate(x, g * 2.0 * x.data)

    return _node(out_data, (x,), backward, "square")


def absval(x):
    out_data = np.abs(x.data)

    def backward(g):
        _accumulate(x, g * np.sign(x.data))

    return _node(out_data, (x,), backward, "abs")


def clip(x, lo, hi):
    """Clamp values; gradient passes through the interior, zero outside."""
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        inside = (x.data >= lo) & (x.data <= hi)
        _accumulate(x, g * inside)

    return _node(out_data, (x,), backward, "clip")


def mean(x, axis=None, keepdims=False):
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    # keep the divisor a python int: an int64 scalar would promote
    # float32 adjoints to float64 through the whole upstream graph
    count = x.data.size if axis is None else int(
        np.prod([x.data.shape[a] for a in _normalize_axes(axis, x.data.ndim)])
    )

    def backward(g):
        _accumulate(x, _spread(g / count, x.data.shape, axis, keepdims))

    return _node(out_data, (x,), backward, "mean")


def tsum(x, axis=None, keepdims=False):
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        _accumulate(x, _spread(g, x.data.shape, axis, keepdims))

    return _node(out_data, (x,), backward, "sum")


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _spread(g, shape, axis, keepdims):
    """Broadcast a reduced adjoint back to the un-reduced shape."""
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = _normalize_axes(axis, len(shape))
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reshape(x, shape):
    out_data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _node(out_data, (x,), backward, "reshape")


def cumsum(x, axis=-1):
    out_data = np.cumsum(x.data, axis=axis)

    def backward(g):
        flipped = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        _accumulate(x, flipped)

    return _node(out_data, (x,), backward, "cumsum")


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, out_data * (g - dot))

    return _node(out_data, (x,), backward, "softmax")


def concat(tensors, axis=-1):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty tensor list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(out_data, tuple(tensors), backward, "concat")


# -- linear algebra and spatial ops --------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner-dimension mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(out_data, (a, b), backward, "matmul")


def _im2col(x, ksize, stride, pad):
    """Patch matrix in (C*k*k, N*Ho*Wo) layout.

    The output-position axis is innermost so the gather copies contiguous
    row runs instead of 4-byte strided elements.
    """
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - ksize) // stride + 1
    wo = (w + 2 * pad - ksize) // stride + 1
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, ksize, ksize, n, ho, wo),
        strides=(s1, s2, s3, s0, s2 * stride, s3 * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * ksize * ksize, n * ho * wo), ho, wo


def _col2im(gcols, x_shape, ksize, stride, pad, ho, wo):
    n, c, h, w = x_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gcols.dtype)
    v = gcols.reshape(c, ksize, ksize, n, ho, wo)
    for i in range(ksize):
        i_hi = i + stride * ho
        for j in range(ksize):
            j_hi = j + stride * wo
            xp[:, :, i:i_hi:stride, j:j_hi:stride] += v[:, i, j].transpose(1, 0, 2, 3)
    if pad == 0:
        return xp
    return xp[:, :, pad:-pad, pad:-pad]


def conv2d(x, weight, bias=None, stride=1, padding=1):
    """3x3 convolution over NCHW input with zero padding.

    ``weight`` has shape (C_out, C_in, k, k); stride must be 1 or 2.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {x.data.shape}")
    cout, cin, kh, kw = weight.data.shape
    if kh != kw:
        raise ValueError("conv2d kernels must be square")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.data.shape[1] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.data.shape[1]}, kernel wants {cin}"
        )
    n = x.data.shape[0]
    cols, ho, wo = _im2col(x.data, kh, stride, padding)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = wmat @ cols  # (C_out, N*Ho*Wo)
    if bias is not None:
        out += bias.data[:, None]
    out_data = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        _accumulate(weight, (gmat @ cols.T).reshape(weight.data.shape))
        if bias is not None:
            _accumulate(bias, gmat.sum(axis=1))
        gcols = wmat.T @ gmat
        _accumulate(x, _col2im(gcols, x.data.shape, kh, stride, padding, ho, wo))

    return _node(out_data, parents, backward, "conv2d")


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW, got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def backward(g):
        _accumulate(x, np.broadcast_to((g / (h * w))[:, :, None, None], x.data.shape))

    return _node(out_data, (x,), backward, "gap")


def batch_norm(x, gamma, beta, axes, eps):
    """Fused batch normalization with batch statistics (training mode).

    ``axes`` are the reduction axes ((0,) for NF, (0, 2, 3) for NCHW);
    variance is biased.  Returns (out, batch_mean, batch_var) with the
    statistics as plain arrays for running-average updates.
    """
    stat_shape = tuple(
        1 if a in axes else s for a, s in enumerate(x.data.shape)
    )
    reduce_spec = "nc,nc->c" if x.data.ndim == 2 else "nchw,nchw->c"
    count = int(np.prod([x.data.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gam = gamma.data.reshape(stat_shape)
    out_data = xhat * gam + beta.data.reshape(stat_shape)

    def backward(g):
        # einsum reductions and in-place updates keep this memory-bound op
        # to two full-size temporaries
        _accumulate(gamma, np.einsum(reduce_spec, g, xhat))
        _accumulate(beta, g.sum(axis=axes))
        gx = g * gam
        gx_mean = gx.mean(axis=axes, keepdims=True)
        gxx_mean = (np.einsum(reduce_spec, gx, xhat) / count).reshape(stat_shape)
        dx = xhat * gxx_mean
        np.subtract(gx, dx, out=dx)
        dx -= gx_mean
        dx *= inv
        _accumulate(x, dx)

    out = _node(out_data, (x, gamma, beta), backward, "batch_norm")
    return out, mu.reshape(-1), var.reshape(-1)


def batch_norm_inference(x, gamma, beta, running_mean, running_var, axes, eps):
    """Batch normalization with fixed (running) statistics."""
    stat_shape = tuple(
        1 if a in axes else s for a, s in enumerate(x.data.shape)
    )
    inv = (1.0 / np.sqrt(running_var + eps)).reshape(stat_shape).astype(x.data.dtype)
    scale = gamma.data.reshape(stat_shape) * inv
    out_data = (x.data - running_mean.reshape(stat_shape)) * scale + beta.data.reshape(
        stat_shape
    )

    def backward(g):
        xhat = (x.data - running_mean.reshape(stat_shape)) * inv
        _accumulate(gamma, (g * xhat).sum(axis=axes).reshape(gamma.data.shape))
        _accumulate(beta, g.sum(axis=axes).reshape(beta.data.shape))
        _accumulate(x, g * scale)

    return _node(out_data, (x, gamma, beta), backward, "batch_norm_inference")


# -- gradient verification ------------------------------------------------------


def finite_difference_gradient(loss_fn, params, eps=1e-4):
    """Central-difference gradient of a scalar-valued closure.

    ``loss_fn`` re-evaluates the forward pass from the current parameter
    data and returns a float (or scalar Tensor); ``params`` are the leaf
    tensors perturbed in place one entry at a time.
    """
    if eps <= 0:
        raise ValueError(f"finite differences need eps > 0, got {eps}")

    def evaluate():
        out = loss_fn()
        if isinstance(out, Tensor):
            if out.data.size != 1:
                raise ValueError("finite differences need a scalar loss")
            return float(out.data.reshape(-1)[0])
        return float(out)

    grads = []
    for p in params:
        g = np.zeros(p.data.shape, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(loss_fn, params, eps=1e-4, rtol=1e-4, atol=1e-7):
    """Compare backward() gradients against the finite-difference oracle.

    Returns the maximum relative error over all parameter entries.  Raises
    if backward produced no gradient for a parameter that needs one.
    """
    for p in params:
        p.zero_grad()
    out = loss_fn()
    if not isinstance(out, Tensor):
        raise TypeError("check_gradients needs the closure to return a Tensor")
    out.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            raise ValueError("parameter received no gradient from backward()")
        analytic.append(np.array(p.grad, dtype=np.float64))
    numeric = finite_difference_gradient(loss_fn, params, eps=eps)
    worst = 0.0
    for a, n_ in zip(analytic, numeric):
        scale = np.maximum(np.abs(n_), np.abs(a))
        err = np.abs(a - n_) / np.maximum(scale, atol / rtol)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
