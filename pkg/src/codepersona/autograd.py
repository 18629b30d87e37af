"""Dense float64 tensors with a recorded-graph reverse-mode autodiff.

A :class:`Graph` records every primitive application in execution order.
``Graph.backward`` walks the record once in reverse and deposits gradients on
every non-frozen :class:`Parameter` reachable from the loss.  Frozen
parameters behave as constants: no gradient is computed for them and no
gradient buffer is ever allocated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LAYERNORM_EPS = 1e-5

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327

_ids = itertools.count()


class AutogradError(Exception):
    pass


class ShapeError(AutogradError):
    pass


class NonFiniteError(AutogradError):
    pass


class GraphConsumedError(AutogradError):
    pass


class MissingGradientError(AutogradError):
    pass


class Tensor:
    """A dense row-major array of doubles, optionally carrying a gradient."""

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.require(values, np.float64, "C")
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name if name is not None else f"t{next(_ids)}"

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"


class Parameter(Tensor):
    """A named, block-labelled trainable tensor."""

    def __init__(self, id, block_label, values, frozen=False):
        super().__init__(values, requires_grad=not frozen, name=id)
        self.id = id
        self.block_label = block_label

    @property
    def frozen(self):
        return not self.requires_grad

    @frozen.setter
    def frozen(self, value):
        self.requires_grad = not value
        if value:
            self.grad = None

    def __repr__(self):
        flag = " frozen" if self.frozen else ""
        return f"Parameter({self.id!r}, {self.block_label}, shape={self.shape}{flag})"


def constant(values):
    return Tensor(values, requires_grad=False)


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    ctx: dict = field(default_factory=dict)

    @property
    def input_ids(self):
        return tuple(t.name for t in self.inputs)

    @property
    def output_id(self):
        return self.output.name


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# Each primitive: forward(values..., **attrs) -> (out, ctx);
# backward(ctx, g, needs) -> list of input grads (None where not needed).


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        # (..., k) @ (k, n) as a single 2-D gemm
        out = (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
        return out, {"a": a, "b": b}
    try:
        out = np.matmul(a, b)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None
    return out, {"a": a, "b": b}


def _matmul_bwd(ctx, g, needs):
    a, b = ctx["a"], ctx["b"]
    if b.ndim == 2:
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.T).reshape(a.shape) if needs[0] else None
        gb = a.reshape(-1, a.shape[-1]).T @ g2 if needs[1] else None
        return [ga, gb]
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if needs[0] else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
    return [ga, gb]


def _add_fwd(a, b):
    try:
        out = a + b
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return out, {"sa": a.shape, "sb": b.shape}


def _add_bwd(ctx, g, needs):
    return [
        _unbroadcast(g, ctx["sa"]) if needs[0] else None,
        _unbroadcast(g, ctx["sb"]) if needs[1] else None,
    ]


def _mul_fwd(a, b):
    try:
        out = a * b
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return out, {"a": a, "b": b}


def _mul_bwd(ctx, g, needs):
    a, b = ctx["a"], ctx["b"]
    return [
        _unbroadcast(g * b, a.shape) if needs[0] else None,
        _unbroadcast(g * a, b.shape) if needs[1] else None,
    ]


def _scale_fwd(x, factor):
    return x * factor, {"factor": factor}


def _scale_bwd(ctx, g, needs):
    return [g * ctx["factor"]]


def _sum_fwd(x, axis=None):
    return np.sum(x, axis=axis), {"shape": x.shape, "axis": axis}


def _sum_bwd(ctx, g, needs):
    shape, axis = ctx["shape"], ctx["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [np.broadcast_to(g, shape).copy()]


def _softmax_fwd(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return y, {"y": y, "axis": axis}


def _softmax_bwd(ctx, g, needs):
    y, axis = ctx["y"], ctx["axis"]
    return [y * (g - (g * y).sum(axis=axis, keepdims=True))]


def _layernorm_fwd(x, gamma=None, beta=None, eps=LAYERNORM_EPS):
    d = x.shape[-1]
    for p in (gamma, beta):
        if p is not None and p.shape != (d,):
            raise ShapeError(f"layernorm: affine shape {p.shape} != ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out, {"xhat": xhat, "rstd": rstd, "gamma": gamma}


def _layernorm_bwd(ctx, g, needs):
    xhat, rstd, gamma = ctx["xhat"], ctx["rstd"], ctx["gamma"]
    grads = [None] * len(needs)
    lead = tuple(range(g.ndim - 1))
    if len(needs) > 1 and needs[1]:
        grads[1] = (g * xhat).sum(axis=lead)
    if len(needs) > 2 and needs[2]:
        grads[2] = g.sum(axis=lead)
    if needs[0]:
        gx = g * gamma if gamma is not None else g
        d = xhat.shape[-1]
        grads[0] = rstd / d * (
            d * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
        )
    return grads


def _gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    return x * cdf, {"x": x, "cdf": cdf}


def _gelu_bwd(ctx, g, needs):
    x, cdf = ctx["x"], ctx["cdf"]
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return [g * (cdf + x * pdf)]


def _embedding_fwd(weight, ids):
    ids = np.asarray(ids)
    if weight.ndim != 2:
        raise ShapeError(f"embedding-lookup: weight must be 2-D, got {weight.shape}")
    if ids.dtype.kind not in "iu":
        raise ShapeError("embedding-lookup: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding-lookup: id out of range [0, {weight.shape[0]})")
    return weight[ids], {"ids": ids, "shape": weight.shape}


def _embedding_bwd(ctx, g, needs):
    gw = np.zeros(ctx["shape"])
    np.add.at(gw, ctx["ids"], g)
    return [gw]


def _concat_fwd(*xs, axis=0):
    try:
        out = np.concatenate(xs, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    return out, {"sizes": [x.shape[axis] for x in xs], "axis": axis}


def _concat_bwd(ctx, g, needs):
    bounds = np.cumsum(ctx["sizes"])[:-1]
    parts = np.split(g, bounds, axis=ctx["axis"])
    return [p if n else None for p, n in zip(parts, needs)]


def _slice_fwd(x, index):
    try:
        out = x[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc}") from None
    return np.array(out), {"index": index, "shape": x.shape}


def _slice_bwd(ctx, g, needs):
    gx = np.zeros(ctx["shape"])
    gx[ctx["index"]] = g
    return [gx]


def _reshape_fwd(x, shape):
    try:
        out = x.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return out, {"shape": x.shape}


def _reshape_bwd(ctx, g, needs):
    return [g.reshape(ctx["shape"])]


def _transpose_fwd(x, axes):
    if len(axes) != x.ndim:
        raise ShapeError(f"transpose: axes {axes} for {x.ndim}-D input")
    return np.transpose(x, axes), {"inverse": np.argsort(axes)}


def _transpose_bwd(ctx, g, needs):
    return [np.transpose(g, ctx["inverse"])]


def _cross_entropy_fwd(logits, targets, ignore_index=-100):
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross-entropy: targets {targets.shape} vs logits {logits.shape}")
    keep = targets != ignore_index
    safe = np.where(keep, targets, 0)
    if safe.size and (safe.min() < 0 or safe.max() >= logits.shape[-1]):
        raise ShapeError("cross-entropy: target id out of range")
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    nll = np.where(keep, nll, 0.0)
    return nll, {"logp": logp, "safe": safe, "keep": keep}


def _cross_entropy_bwd(ctx, g, needs):
    p = np.exp(ctx["logp"])
    np.put_along_axis(p, ctx["safe"][..., None],
                      np.take_along_axis(p, ctx["safe"][..., None], axis=-1) - 1.0, axis=-1)
    scale = np.where(ctx["keep"], g, 0.0)[..., None]
    return [p * scale]


PRIMITIVES = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "softmax": (_softmax_fwd, _softmax_bwd),
    "layernorm": (_layernorm_fwd, _layernorm_bwd),
    "gelu": (_gelu_fwd, _gelu_bwd),
    "embedding-lookup": (_embedding_fwd, _embedding_bwd),
    "concat": (_concat_fwd, _concat_bwd),
    "slice": (_slice_fwd, _slice_bwd),
    "reshape": (_reshape_fwd, _reshape_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "cross-entropy": (_cross_entropy_fwd, _cross_entropy_bwd),
}


class Graph:
    """Ordered record of primitive applications for one forward pass.

    With ``record=False`` the graph evaluates primitives without keeping
    any backward state (inference mode).
    """

    def __init__(self, record=True, trace=False):
        self.record = record
        self.trace = [] if trace else None
        self.nodes = []
        self._outputs = set()
        self.consumed = False

    def apply(self, kind, *inputs, **attrs):
        try:
            fwd, _ = PRIMITIVES[kind]
        except KeyError:
            raise AutogradError(f"unknown primitive {kind!r}") from None
        inputs = tuple(x if isinstance(x, Tensor) else constant(x) for x in inputs)
        out_values, ctx = fwd(*(x.values for x in inputs), **attrs)
        if self.trace is not None:
            self.trace.append((kind, tuple(x.shape for x in inputs), out_values.shape))
        if not np.all(np.isfinite(out_values)):
            raise NonFiniteError(f"{kind} produced a non-finite value")
        needs_grad = self.record and any(x.requires_grad for x in inputs)
        out = Tensor(out_values, requires_grad=needs_grad)
        if needs_grad:
            self.nodes.append(Node(kind, inputs, out, ctx))
            self._outputs.add(out.name)
        return out

    # thin conveniences so model code reads naturally
    def matmul(self, a, b):
        return self.apply("matmul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def scale(self, x, factor):
        return self.apply("scale", x, factor=float(factor))

    def sum(self, x, axis=None):
        return self.apply("sum", x, axis=axis)

    def softmax(self, x, axis=-1):
        return self.apply("softmax", x, axis=axis)

    def layernorm(self, x, gamma=None, beta=None):
        args = [x] + [p for p in (gamma, beta) if p is not None]
        if beta is not None and gamma is None:
            raise AutogradError("layernorm: beta without gamma is not supported")
        return self.apply("layernorm", *args)

    def gelu(self, x):
        return self.apply("gelu", x)

    def embedding(self, weight, ids):
        return self.apply("embedding-lookup", weight, ids=ids)

    def concat(self, xs, axis=0):
        return self.apply("concat", *xs, axis=axis)

    def slice(self, x, index):
        return self.apply("slice", x, index=index)

    def reshape(self, x, shape):
        return self.apply("reshape", x, shape=tuple(shape))

    def transpose(self, x, axes):
        return self.apply("transpose", x, axes=tuple(axes))

    def cross_entropy(self, logits, targets, ignore_index=-100):
        return self.apply("cross-entropy", logits, targets=targets, ignore_index=ignore_index)

    def backward(self, loss):
        if self.consumed:
            raise GraphConsumedError("graph already consumed by a previous backward pass")
        if loss.size != 1:
            raise AutogradError(f"loss must be scalar, got shape {loss.shape}")
        if loss.name not in self._outputs:
            raise AutogradError("loss was not produced by this graph")
        self.consumed = True
        grads = {loss.name: np.ones_like(loss.values)}
        for node in reversed(self.nodes):
            g = grads.pop(node.output.name, None)
            if g is None:
                continue
            _, bwd = PRIMITIVES[node.kind]
            needs = [x.requires_grad for x in node.inputs]
            for x, gx in zip(node.inputs, bwd(node.ctx, g, needs)):
                if gx is None or not x.requires_grad:
                    continue
                if isinstance(x, Parameter) or x.name not in self._outputs:  # leaf
                    if x.grad is None:
                        x.grad = np.array(gx, dtype=np.float64)
                    else:
                        x.grad += gx
                elif x.name in grads:
                    grads[x.name] = grads[x.name] + gx
                else:
                    grads[x.name] = gx


def backward(graph, loss):
    graph.backward(loss)


def apply_primitive(graph, kind, *inputs, **attrs):
    return graph.apply(kind, *inputs, **attrs)
