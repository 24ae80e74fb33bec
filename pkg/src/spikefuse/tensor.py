"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in numpy arrays. Every differentiable operation appends one
record to a global tape; recording order is a valid topological order, so
``backward`` replays the tape once in reverse, accumulating gradients into
every reachable tensor that requires them. Double backward is not
supported: backward rules work on raw arrays and are never re-recorded.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes or a single-element operand. Anything richer goes through the
explicit ``broadcast_to`` op so the sum-reduction in the backward pass is
always visible at the call site.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

_TAPE: list["_Record"] = []
_GRAD_ENABLED = True


class _Record:
    """One recorded operation: its output tensors and a backward rule."""

    __slots__ = ("outputs", "backward_fn")

    def __init__(self, outputs, backward_fn):
        self.outputs = outputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape_idx")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape_idx = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------
    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- tape management ------------------------------------------------------


def clear_tape():
    _TAPE.clear()


def tape_size() -> int:
    return len(_TAPE)


@contextlib.contextmanager
def no_grad():
    """Disable recording; everything computed inside is a constant."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _record(outputs: Sequence[Tensor], backward_fn):
    idx = len(_TAPE)
    _TAPE.append(_Record(tuple(outputs), backward_fn))
    for out in outputs:
        out._tape_idx = idx


def _make_output(data, parents: Iterable[Tensor]) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires)


def backward(loss: Tensor):
    """Populate grads of every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar (size 1).
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad; nothing to differentiate")
    loss._accumulate(np.ones_like(loss.data))
    if loss._tape_idx is None:
        return
    for rec in reversed(_TAPE[: loss._tape_idx + 1]):
        grads = [o.grad for o in rec.outputs]
        if all(g is None for g in grads):
            continue
        rec.backward_fn(grads)


# -- elementwise ops ------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, op_name: str):
    """Allow equal shapes or a single-element operand, nothing richer."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op_name}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    """Sum ``g`` down to ``shape`` (used when one operand was a scalar)."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape) if np.prod(shape) == 1 else np.broadcast_to(g, shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = _make_output(a.data + b.data, (a, b))
    if out.requires_grad:
        def backward_fn(grads):
            g = grads[0]
            a._accumulate(_reduce_to(g, a.shape))
            b._accumulate(_reduce_to(g, b.shape))

        _record((out,), backward_fn)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = _make_output(a.data - b.data, (a, b))
    if out.requires_grad:
        def backward_fn(grads):
            g = grads[0]
            a._accumulate(_reduce_to(g, a.shape))
            b._accumulate(_reduce_to(-g, b.shape))

        _record((out,), backward_fn)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = _make_output(a.data * b.data, (a, b))
    if out.requires_grad:
        ad, bd = a.data, b.data

        def backward_fn(grads):
            g = grads[0]
            a._accumulate(_reduce_to(g * bd, a.shape))
            b._accumulate(_reduce_to(g * ad, b.shape))

        _record((out,), backward_fn)
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    out = _make_output(a.data / b.data, (a, b))
    if out.requires_grad:
        ad, bd = a.data, b.data

        def backward_fn(grads):
            g = grads[0]
            a._accumulate(_reduce_to(g / bd, a.shape))
            b._accumulate(_reduce_to(-g * ad / (bd * bd), b.shape))

        _record((out,), backward_fn)
    return out


def _unary(x, fwd, bwd_of_out) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(fwd(x.data), (x,))
    if out.requires_grad:
        od, xd = out.data, x.data

        def backward_fn(grads):
            x._accumulate(grads[0] * bwd_of_out(od, xd))

        _record((out,), backward_fn)
    return out


def sigmoid(x) -> Tensor:
    def fwd(v):
        # numerically symmetric form, never overflows
        p = np.empty_like(v)
        pos = v >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        p[~pos] = ev / (1.0 + ev)
        return p

    return _unary(x, fwd, lambda o, _: o * (1.0 - o))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda o, _: 1.0 - o * o)


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda o, v: (v > 0.0).astype(np.float64))


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda o, _: o)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda _, v: 1.0 / v)


def sqrt(x) -> Tensor:
    return _unary(x, np.sqrt, lambda o, _: 0.5 / o)


def clip_min(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x > floor."""
    x = _as_tensor(x)
    out = _make_output(np.maximum(x.data, floor), (x,))
    if out.requires_grad:
        mask = (x.data > floor).astype(np.float64)

        def backward_fn(grads):
            x._accumulate(grads[0] * mask)

        _record((out,), backward_fn)
    return out


def safe_div(a, b) -> Tensor:
    """a / b with the convention that entries where b == 0 are exactly 0.

    Gradients are also zero on those entries, so a zeroed denominator acts
    like a hard gate rather than an epsilon-smoothed one.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "safe_div")
    mask = b.data != 0.0
    denom = np.where(mask, b.data, 1.0)
    out = _make_output(np.where(mask, a.data / denom, 0.0), (a, b))
    if out.requires_grad:
        ad = a.data

        def backward_fn(grads):
            g = grads[0] * mask
            a._accumulate(_reduce_to(g / denom, a.shape))
            b._accumulate(_reduce_to(-g * ad / (denom * denom), b.shape))

        _record((out,), backward_fn)
    return out


# -- shape ops ------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(x.data.reshape(shape), (x,))
    if out.requires_grad:
        orig = x.shape

        def backward_fn(grads):
            x._accumulate(grads[0].reshape(orig))

        _record((out,), backward_fn)
    return out


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(np.transpose(x.data, axes), (x,))
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))

        def backward_fn(grads):
            x._accumulate(np.transpose(grads[0], inv))

        _record((out,), backward_fn)
    return out


def broadcast_to(x, shape) -> Tensor:
    """Explicitly materialize a broadcast; backward sums over the new axes."""
    x = _as_tensor(x)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from e
    out = _make_output(np.ascontiguousarray(data), (x,))
    if out.requires_grad:
        src = x.shape
        lead = len(shape) - len(src)
        summed_axes = tuple(range(lead)) + tuple(
            lead + i for i, s in enumerate(src) if s == 1 and shape[lead + i] != 1
        )

        def backward_fn(grads):
            g = grads[0]
            if summed_axes:
                g = g.sum(axis=summed_axes, keepdims=False)
            x._accumulate(g.reshape(src))

        _record((out,), backward_fn)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _make_output(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward_fn(grads):
            for t, piece in zip(tensors, np.split(grads[0], splits, axis=axis)):
                t._accumulate(piece)

        _record((out,), backward_fn)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _make_output(np.stack([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        def backward_fn(grads):
            for i, t in enumerate(tensors):
                t._accumulate(np.take(grads[0], i, axis=axis))

        _record((out,), backward_fn)
    return out


def unstack(x, axis: int = 0):
    """Split into views along ``axis``; one tape record for all outputs."""
    x = _as_tensor(x)
    n = x.shape[axis]
    moved = np.moveaxis(x.data, axis, 0)
    outs = tuple(_make_output(moved[i], (x,)) for i in range(n))
    if outs and outs[0].requires_grad:
        piece_shape = moved.shape[1:]

        def backward_fn(grads):
            full = np.stack(
                [g if g is not None else np.zeros(piece_shape) for g in grads], axis=0
            )
            x._accumulate(np.moveaxis(full, 0, axis))

        _record(outs, backward_fn)
    return outs


def take_index(x, index: int, axis: int = 0) -> Tensor:
    """Select one slice along ``axis`` (e.g. the CLS row)."""
    x = _as_tensor(x)
    out = _make_output(np.take(x.data, index, axis=axis), (x,))
    if out.requires_grad:
        def backward_fn(grads):
            g = np.zeros_like(x.data)
            sl = [slice(None)] * x.ndim
            sl[axis] = index
            g[tuple(sl)] = grads[0]
            x._accumulate(g)

        _record((out,), backward_fn)
    return out


def gather_rows(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = _make_output(table.data[ids], (table,))
    if out.requires_grad:
        def backward_fn(grads):
            g = np.zeros_like(table.data)
            np.add.at(g, ids, grads[0])
            table._accumulate(g)

        _record((out,), backward_fn)
    return out


def select_last_axis(x, idx) -> Tensor:
    """out[...] = x[..., idx[...]], one picked entry per leading position."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    picked = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]
    out = _make_output(picked, (x,))
    if out.requires_grad:
        def backward_fn(grads):
            g = np.zeros_like(x.data)
            np.put_along_axis(g, idx[..., None], grads[0][..., None], axis=-1)
            x._accumulate(g)

        _record((out,), backward_fn)
    return out


# -- reductions -----------------------------------------------------------


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(np.sum(x.data, axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:
        shape = x.shape

        def backward_fn(grads):
            g = grads[0]
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis=axis)
            x._accumulate(np.broadcast_to(g, shape))

        _record((out,), backward_fn)
    return out


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = _make_output(np.mean(x.data, axis=axis, keepdims=keepdims), (x,))
    if out.requires_grad:
        shape = x.shape
        count = x.size if axis is None else np.prod(
            [shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )

        def backward_fn(grads):
            g = grads[0]
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis=axis)
            x._accumulate(np.broadcast_to(g, shape) / count)

        _record((out,), backward_fn)
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supports 2-D x 2-D, N-D x 2-D (shared weight applied to a stack), and
    N-D x N-D with identical leading batch dims.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    out = _make_output(np.matmul(a.data, b.data), (a, b))
    if out.requires_grad:
        ad, bd = a.data, b.data

        def backward_fn(grads):
            g = grads[0]
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            if b.ndim == 2 and a.ndim > 2:
                k, n = bd.shape
                gb = np.matmul(ad.reshape(-1, k).T, g.reshape(-1, n))
            else:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            a._accumulate(ga)
            b._accumulate(gb)

        _record((out,), backward_fn)
    return out


def softmax_rows(x, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis at the given temperature.

    Computed with max subtraction, so adding a constant to a row changes
    nothing and large logits never overflow.
    """
    x = _as_tensor(x)
    if not np.isscalar(temperature) or temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = x.data / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=-1, keepdims=True)
    out = _make_output(s, (x,))
    if out.requires_grad:
        def backward_fn(grads):
            g = grads[0]
            inner = np.sum(g * s, axis=-1, keepdims=True)
            x._accumulate(s * (g - inner) / temperature)

        _record((out,), backward_fn)
    return out


def log_softmax_rows(x) -> Tensor:
    """log(softmax) over the last axis, max-subtracted for stability."""
    x = _as_tensor(x)
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    out = _make_output(z - lse, (x,))
    if out.requires_grad:
        soft = np.exp(out.data)

        def backward_fn(grads):
            g = grads[0]
            x._accumulate(g - soft * np.sum(g, axis=-1, keepdims=True))

        _record((out,), backward_fn)
    return out


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over (batch, channel, h, w) input.

    Output spatial dims are floor((h + 2p - kh) / s) + 1. Implemented with
    an im2col lowering so the inner product is a single GEMM.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D input/kernel, got {x.shape}, {kernel.shape}")
    b, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d stride/padding out of range: {stride}, {padding}")
    ph, pw = h + 2 * padding, w + 2 * padding
    if kh > ph or kw > pw:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {ph}x{pw}"
        )
    oh = (ph - kh) // stride + 1
    ow = (pw - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw)
    kmat = kernel.data.reshape(o, c * kh * kw)
    out_data = (cols2 @ kmat.T).reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    out = _make_output(out_data, (x, kernel))
    if out.requires_grad:
        def backward_fn(grads):
            g2 = grads[0].transpose(0, 2, 3, 1).reshape(b * oh * ow, o)
            kernel._accumulate((g2.T @ cols2).reshape(o, c, kh, kw))
            gcols = (g2 @ kmat).reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            x._accumulate(gxp)

        _record((out,), backward_fn)
    return out
