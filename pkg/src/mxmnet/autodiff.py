"""Reverse-mode automatic differentiation over dense float64 tensors.

Every operation records one step onto the active :class:`Tape`.  Steps are
appended in execution order, which is already a valid topological order, so
:func:`backward` simply walks the recorded list in reverse and applies each
step's gradient rule.  A fresh tape is built per forward pass; graph shape
may change freely between passes.

Design constraints honoured here:

* all payloads are float64 numpy arrays (numpy is the raw array backend,
  the differentiation logic lives entirely in this module);
* gradients accumulate additively, so a tensor consumed by several ops (or
  several ``backward`` calls on one tape) sums its contributions;
* ``segment_sum`` adds rows per segment in a canonical order (sorted by raw
  row bytes within each segment), so permuting its input rows returns a
  bit-identical result;
* the active tape is thread local: independent tapes on separate threads do
  not interfere.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeOp",
    "ShapeError",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "add_bias",
    "concat",
    "gather",
    "segment_sum",
    "swish",
    "sum_all",
    "mean_all",
    "abs_val",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    ``requires_grad`` marks trainable leaves; derived tensors inherit the
    flag from their inputs.  ``grad`` is lazily allocated by ``backward``
    and always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shape intact
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != ():
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class TapeOp:
    """One recorded step: inputs, output, a forward replay and a grad rule."""

    __slots__ = ("name", "inputs", "output", "forward_fn", "backward_fn")

    def __init__(self, name, inputs, output, forward_fn, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.forward_fn = forward_fn
        self.backward_fn = backward_fn


_ACTIVE = threading.local()


def _current_tape():
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Ordered record of operations for one forward pass.

    Used as a context manager; entering makes it the active tape for the
    current thread, leaving restores the previous one (tapes may nest).
    """

    def __init__(self):
        self.ops: list[TapeOp] = []

    def __enter__(self):
        self._prev = _current_tape()
        _ACTIVE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.tape = self._prev
        return False

    def __len__(self):
        return len(self.ops)

    def replay(self):
        """Re-execute every recorded forward step in order.

        Inputs are read from the tensors' current ``data``, outputs are
        written back in place; with unchanged leaves the results are
        bit-identical to the original pass.
        """
        for op in self.ops:
            op.forward_fn()


def _record(name, inputs, output, forward_fn, backward_fn):
    tape = _current_tape()
    if tape is not None and output.requires_grad:
        tape.ops.append(TapeOp(name, tuple(inputs), output, forward_fn, backward_fn))
    return output


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # own the buffer, g may alias
    else:
        t.grad += g


def backward(output: Tensor, tape: Tape):
    """Accumulate d(output)/d(leaf) into ``grad`` of every tracked tensor.

    ``output`` must be a scalar recorded on ``tape``.  Leaf grad buffers are
    not cleared first, so backward passes over separate tapes that share
    parameters add up (gradient accumulation over a batch).  Call this once
    per tape.
    """
    if output.data.shape != ():
        raise ShapeError(
            f"backward needs a scalar output, got shape {output.data.shape}"
        )
    if output.grad is None:
        output.grad = np.zeros((), dtype=np.float64)
    output.grad += 1.0
    for op in reversed(tape.ops):
        if op.output.grad is not None:
            op.backward_fn()


def _require_grad(*tensors) -> bool:
    return any(t.requires_grad for t in tensors)


def _same_shape(name, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two tensors with identical shapes."""
    _same_shape("add", a, b)
    out = Tensor(a.data + b.data, _require_grad(a, b))

    def forward_fn():
        np.add(a.data, b.data, out=out.data)

    def backward_fn():
        g = out.grad
        _accumulate(a, g)
        _accumulate(b, g)

    return _record("add", (a, b), out, forward_fn, backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference, shapes must match."""
    _same_shape("sub", a, b)
    out = Tensor(a.data - b.data, _require_grad(a, b))

    def forward_fn():
        np.subtract(a.data, b.data, out=out.data)

    def backward_fn():
        g = out.grad
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record("sub", (a, b), out, forward_fn, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product, shapes must match."""
    _same_shape("mul", a, b)
    out = Tensor(a.data * b.data, _require_grad(a, b))

    def forward_fn():
        np.multiply(a.data, b.data, out=out.data)

    def backward_fn():
        g = out.grad
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _record("mul", (a, b), out, forward_fn, backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated through)."""
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad)

    def forward_fn():
        np.multiply(a.data, c, out=out.data)

    def backward_fn():
        _accumulate(a, out.grad * c)

    return _record("scale", (a,), out, forward_fn, backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a (m, k) tensor with a (k, n) tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul needs 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, _require_grad(a, b))

    def forward_fn():
        np.matmul(a.data, b.data, out=out.data)

    def backward_fn():
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _record("matmul", (a, b), out, forward_fn, backward_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n bias row to every row of an (m, n) tensor."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"add_bias: incompatible shapes {x.data.shape} and {b.data.shape}"
        )
    out = Tensor(x.data + b.data, _require_grad(x, b))

    def forward_fn():
        np.add(x.data, b.data, out=out.data)

    def backward_fn():
        g = out.grad
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0))

    return _record("add_bias", (x, b), out, forward_fn, backward_fn)


def concat(tensors) -> Tensor:
    """Concatenate along the last axis; leading dimensions must agree."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim or t.data.shape[:-1] != lead:
            raise ShapeError(
                "concat: leading dimensions differ, "
                + " vs ".join(str(t.data.shape) for t in tensors)
            )
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=-1), _require_grad(*tensors)
    )
    widths = [t.data.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def forward_fn():
        np.concatenate([t.data for t in tensors], axis=-1, out=out.data)

    def backward_fn():
        g = out.grad
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, g[..., lo:hi])

    return _record("concat", tensors, out, forward_fn, backward_fn)


def gather(x: Tensor, index) -> Tensor:
    """Select rows of a 2-d tensor; repeated indices scatter-add on backward."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather needs a 2-d tensor, got shape {x.data.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(
            f"gather index out of range for {x.data.shape[0]} rows: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = Tensor(x.data[idx], x.requires_grad)

    def forward_fn():
        out.data[...] = x.data[idx]

    def backward_fn():
        if x.requires_grad:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            _accumulate(x, g)

    return _record("gather", (x,), out, forward_fn, backward_fn)


def _segment_reduce(data: np.ndarray, segments: np.ndarray, num: int) -> np.ndarray:
    out = np.zeros((num,) + data.shape[1:], dtype=np.float64)
    if data.shape[0] == 0:
        return out
    # Canonical within-segment order: sort rows by raw bytes so the sum is
    # bit-identical under any permutation of the input rows.
    rows = np.ascontiguousarray(data.reshape(data.shape[0], -1))
    keys = rows.view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1]))).ravel()
    order = np.argsort(keys, kind="stable")
    order = order[np.argsort(segments[order], kind="stable")]
    seg_sorted = segments[order]
    data_sorted = data[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    bounds = np.r_[starts, seg_sorted.size]
    for k in range(starts.size):
        lo, hi = bounds[k], bounds[k + 1]
        out[seg_sorted[lo]] = data_sorted[lo:hi].sum(axis=0)
    return out


def segment_sum(x: Tensor, segments, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets.

    Empty buckets come out as zero rows.  Accumulation order inside a bucket
    is canonical (row-byte order), making the result independent of the
    order the rows arrive in, bit for bit.
    """
    seg = np.asarray(segments, dtype=np.int64)
    if seg.ndim != 1 or seg.shape[0] != x.data.shape[0]:
        raise ShapeError(
            f"segment_sum: {seg.shape} segment ids for {x.data.shape[0]} rows"
        )
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise IndexError(
            f"segment id out of range [0, {num_segments}): "
            f"[{seg.min()}, {seg.max()}]"
        )
    out = Tensor(_segment_reduce(x.data, seg, num_segments), x.requires_grad)

    def forward_fn():
        out.data[...] = _segment_reduce(x.data, seg, num_segments)

    def backward_fn():
        if x.requires_grad:
            _accumulate(x, out.grad[seg])

    return _record("segment_sum", (x,), out, forward_fn, backward_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x), the activation used throughout the model."""
    s = _sigmoid(x.data)
    out = Tensor(x.data * s, x.requires_grad)

    def forward_fn():
        out.data[...] = x.data * _sigmoid(x.data)

    def backward_fn():
        sg = _sigmoid(x.data)
        _accumulate(x, out.grad * sg * (1.0 + x.data * (1.0 - sg)))

    return _record("swish", (x,), out, forward_fn, backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Reduce every element to one scalar by summation."""
    out = Tensor(x.data.sum(), x.requires_grad)

    def forward_fn():
        out.data[...] = x.data.sum()

    def backward_fn():
        _accumulate(x, np.broadcast_to(out.grad, x.data.shape))

    return _record("sum_all", (x,), out, forward_fn, backward_fn)


def mean_all(x: Tensor) -> Tensor:
    """Scalar mean over every element."""
    if x.data.size == 0:
        raise ShapeError("mean_all of an empty tensor")
    out = Tensor(x.data.mean(), x.requires_grad)
    inv = 1.0 / x.data.size

    def forward_fn():
        out.data[...] = x.data.mean()

    def backward_fn():
        _accumulate(x, np.broadcast_to(out.grad * inv, x.data.shape))

    return _record("mean_all", (x,), out, forward_fn, backward_fn)


def abs_val(x: Tensor) -> Tensor:
    """Elementwise absolute value; subgradient 0 at exactly 0."""
    out = Tensor(np.abs(x.data), x.requires_grad)

    def forward_fn():
        np.abs(x.data, out=out.data)

    def backward_fn():
        _accumulate(x, out.grad * np.sign(x.data))

    return _record("abs_val", (x,), out, forward_fn, backward_fn)
