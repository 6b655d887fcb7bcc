"""Double-precision tensors with a reverse-mode tape, and a small depthwise-separable extractor.

Each op computes its forward value with numpy and registers a closure that pushes the
upstream gradient to its inputs. ``backward(out)`` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.requires_grad:
            self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf. ``decay`` marks weights that take part in the L2 penalty."""

    __slots__ = ("decay",)

    def __init__(self, data, decay=True):
        super().__init__(data, requires_grad=True)
        self.decay = decay


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(out: Tensor, grad=None) -> None:
    """Populate ``.grad`` on every leaf reachable from ``out``."""
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(out): np.ones_like(out.data) if grad is None else np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.accumulate(g)
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            grads[id(parent)] = grads[id(parent)] + pg if id(parent) in grads else pg


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, stride=1, padding=0) -> Tensor:
    """Dense cross-correlation: x (N, C, H, W), w (O, C, k, k) -> (N, O, Ho, Wo)."""
    x, w = as_tensor(x), as_tensor(w)
    _check(x.data.ndim == 4, f"conv2d input must be N x C x H x W, got {x.shape}")
    n, c, h, wd = x.shape
    o, wc, k, k2 = w.shape
    _check(wc == c and k == k2, f"conv2d weight expected (O, {c}, k, k), got {w.shape}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(wd, k, stride, padding)
    _check(ho >= 1 and wo >= 1, f"conv2d kernel {k} too large for input {h}x{wd}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sl = lambda i, j: (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
    out = np.zeros((n, o, ho, wo))
    for i in range(k):
        for j in range(k):
            out += np.einsum("oc,nchw->nohw", w.data[:, :, i, j], xp[sl(i, j)], optimize=True)

    def back(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w.data)
        for i in range(k):
            for j in range(k):
                dw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xp[sl(i, j)], optimize=True)
                dxp[sl(i, j)] += np.einsum("oc,nohw->nchw", w.data[:, :, i, j], g, optimize=True)
        return dxp[:, :, padding : padding + h, padding : padding + wd], dw

    return Tensor(out, (x, w), back)


def depthwise_conv2d(x, w, stride=1, padding=0) -> Tensor:
    """One k x k filter per channel: x (N, C, H, W), w (C, k, k)."""
    x, w = as_tensor(x), as_tensor(w)
    _check(x.data.ndim == 4, f"depthwise input must be N x C x H x W, got {x.shape}")
    n, c, h, wd = x.shape
    _check(w.data.ndim == 3 and w.shape[0] == c and w.shape[1] == w.shape[2],
           f"depthwise weight expected ({c}, k, k), got {w.shape}")
    k = w.shape[1]
    ho, wo = _out_size(h, k, stride, padding), _out_size(wd, k, stride, padding)
    _check(ho >= 1 and wo >= 1, f"depthwise kernel {k} too large for input {h}x{wd}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sl = lambda i, j: (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
    out = np.zeros((n, c, ho, wo))
    for i in range(k):
        for j in range(k):
            out += xp[sl(i, j)] * w.data[None, :, i, j, None, None]

    def back(g):
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w.data)
        for i in range(k):
            for j in range(k):
                dw[:, i, j] = np.einsum("nchw,nchw->c", g, xp[sl(i, j)])
                dxp[sl(i, j)] += g * w.data[None, :, i, j, None, None]
        return dxp[:, :, padding : padding + h, padding : padding + wd], dw

    return Tensor(out, (x, w), back)


def pointwise_conv2d(x, w) -> Tensor:
    """1 x 1 channel mixing: x (N, C, H, W), w (O, C)."""
    x, w = as_tensor(x), as_tensor(w)
    _check(x.data.ndim == 4 and w.data.ndim == 2 and w.shape[1] == x.shape[1],
           f"pointwise expected weight (O, {x.shape[1] if x.data.ndim == 4 else '?'}), got {w.shape}")
    out = np.ascontiguousarray(np.tensordot(w.data, x.data, axes=([1], [1])).transpose(1, 0, 2, 3))

    def back(g):
        dx = np.tensordot(w.data, g, axes=([0], [1])).transpose(1, 0, 2, 3)
        dw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
        return dx, dw

    return Tensor(out, (x, w), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(x.data * mask, (x,), lambda g: (g * mask,))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(a.shape == b.shape, f"add expects equal shapes, got {a.shape} and {b.shape}")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def global_average_pool(x) -> Tensor:
    """Spatial mean: (N, C, H, W) -> (N, C), or (C, H, W) -> (C,)."""
    x = as_tensor(x)
    _check(x.data.ndim in (3, 4), f"pooling expects a 3-D or 4-D tensor, got {x.shape}")
    h, w = x.shape[-2:]
    _check(h >= 1 and w >= 1, "empty spatial extent")
    out = x.data.mean(axis=(-2, -1))
    return Tensor(out, (x,), lambda g: (np.broadcast_to(g[..., None, None] / (h * w), x.shape).copy(),))


def linear(x, w, b=None) -> Tensor:
    """x (N, D) @ w.T + b, with w (O, D)."""
    x, w = as_tensor(x), as_tensor(w)
    _check(x.data.ndim == 2 and w.data.ndim == 2 and w.shape[1] == x.shape[1],
           f"linear expected weight (O, {x.shape[-1]}), got {w.shape} for input {x.shape}")
    out = x.data @ w.data.T
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        _check(b.shape == (w.shape[0],), f"bias expected ({w.shape[0]},), got {b.shape}")
        out = out + b.data
        parents = (x, w, b)

    def back(g):
        grads = (g @ w.data, g.T @ x.data)
        return grads + (g.sum(axis=0),) if b is not None else grads

    return Tensor(out, parents, back)


@dataclass
class NormState:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batch_norm(x, gamma, beta, state: NormState, training: bool) -> Tensor:
    """Per-channel standardization over every axis but 1, then scale and shift.

    Training mode uses batch statistics and updates ``state``; inference uses ``state``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.data.ndim))
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    m = x.data.size // c
    if training:
        if x.shape[0] < 2:
            raise ShapeError("batch_norm in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.mean = (1 - state.momentum) * state.mean + state.momentum * mean
        state.var = (1 - state.momentum) * state.var + state.momentum * var * m / (m - 1)
    else:
        mean, var = state.mean, state.var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            dx = (inv_std.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return Tensor(out, (x, gamma, beta), back)


def reduce_features(f_global, w, b) -> Tensor:
    """ReLU(W f + b): the linear bottleneck ahead of the quantum encoder."""
    return relu(linear(f_global, w, b))


# ---------------------------------------------------------------------------
# extractor


@dataclass
class ExtractorConfig:
    input: tuple[int, int, int] = (3, 64, 64)
    stem_channels: int = 8
    blocks: list[tuple[int, int, int]] = field(default_factory=lambda: [(2, 16, 2), (2, 24, 2), (2, 24, 1)])
    feature_dim: int = 128
    reduced_dim: int = 16

    def __post_init__(self):
        self.input = tuple(int(v) for v in self.input)
        self.blocks = [tuple(int(v) for v in b) for b in self.blocks]
        for e, o, s in self.blocks:
            if s not in (1, 2):
                raise ValueError(f"block stride must be 1 or 2, got {s}")
            if e < 1 or o < 1:
                raise ValueError("block expansion and width must be positive")
        r = self.reduced_dim
        if r < 2 or r & (r - 1):
            raise ValueError(f"reduced_dim must be a power of two >= 2, got {r}")

    def output_hw(self) -> tuple[int, int]:
        _, h, w = self.input
        h, w = _out_size(h, 3, 2, 1), _out_size(w, 3, 2, 1)
        for _, _, s in self.blocks:
            h, w = _out_size(h, 3, s, 1), _out_size(w, 3, s, 1)
        return h, w


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Extractor:
    """Stem conv, inverted-residual blocks, 1x1 head, global pooling, ReLU bottleneck."""

    def __init__(self, cfg: ExtractorConfig, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        self.norms: dict[str, NormState] = {}
        c_in = cfg.input[0]
        self._conv("stem", rng.standard_normal((cfg.stem_channels, c_in, 3, 3)) * np.sqrt(2.0 / (9 * c_in)))
        c = cfg.stem_channels
        for i, (e, o, s) in enumerate(cfg.blocks):
            hidden = c * e
            if e != 1:
                self._conv(f"b{i}.expand", _he(rng, (hidden, c), c))
            self._conv(f"b{i}.dw", _he(rng, (hidden, 3, 3), 9))
            self._conv(f"b{i}.project", _he(rng, (o, hidden), hidden))
            c = o
        self._conv("head", _he(rng, (cfg.feature_dim, c), c))
        self.params["reduce.w"] = Parameter(_he(rng, (cfg.reduced_dim, cfg.feature_dim), cfg.feature_dim))
        self.params["reduce.b"] = Parameter(np.full(cfg.reduced_dim, 0.01), decay=False)

    def _conv(self, name, w):
        self.params[f"{name}.w"] = Parameter(w)
        ch = w.shape[0]
        self.params[f"{name}.bn.gamma"] = Parameter(np.ones(ch), decay=False)
        self.params[f"{name}.bn.beta"] = Parameter(np.zeros(ch), decay=False)
        self.norms[name] = NormState(np.zeros(ch), np.ones(ch))

    def _bn(self, name, x, training):
        p = self.params
        return batch_norm(x, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], self.norms[name], training)

    def pooled(self, x, training=False) -> Tensor:
        """Image batch (N, C, H, W) -> pooled features (N, feature_dim)."""
        x = as_tensor(x)
        _check(x.data.ndim == 4 and x.shape[1:] == self.cfg.input,
               f"extractor expects input (N, {', '.join(map(str, self.cfg.input))}), got {x.shape}")
        p = self.params
        h = relu(self._bn("stem", conv2d(x, p["stem.w"], stride=2, padding=1), training))
        c = self.cfg.stem_channels
        for i, (e, o, s) in enumerate(self.cfg.blocks):
            y = h
            if e != 1:
                y = relu(self._bn(f"b{i}.expand", pointwise_conv2d(y, p[f"b{i}.expand.w"]), training))
            y = relu(self._bn(f"b{i}.dw", depthwise_conv2d(y, p[f"b{i}.dw.w"], stride=s, padding=1), training))
            y = self._bn(f"b{i}.project", pointwise_conv2d(y, p[f"b{i}.project.w"]), training)
            h = add(h, y) if s == 1 and c == o else y
            c = o
        h = relu(self._bn("head", pointwise_conv2d(h, p["head.w"]), training))
        return global_average_pool(h)

    def forward(self, x, training=False) -> Tensor:
        """Image batch -> reduced features (N, reduced_dim)."""
        return reduce_features(self.pooled(x, training), self.params["reduce.w"], self.params["reduce.b"])

    def state(self) -> dict:
        return {
            "params": {k: v.data.tolist() for k, v in self.params.items()},
            "norms": {k: {"mean": v.mean.tolist(), "var": v.var.tolist()} for k, v in self.norms.items()},
        }

    def load_state(self, st: dict) -> None:
        for k, p in self.params.items():
            arr = np.asarray(st["params"][k], dtype=np.float64)
            _check(arr.shape == p.shape, f"checkpoint {k}: expected {p.shape}, got {arr.shape}")
            p.data = arr
        for k, n in self.norms.items():
            n.mean = np.asarray(st["norms"][k]["mean"], dtype=np.float64)
            n.var = np.asarray(st["norms"][k]["var"], dtype=np.float64)


def extract(model: Extractor, image) -> np.ndarray:
    """Inference-mode reduced features for one (C, H, W) image."""
    return model.forward(np.asarray(image, dtype=np.float64)[None], training=False).data[0]
