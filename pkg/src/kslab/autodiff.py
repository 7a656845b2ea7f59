"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects as
a node holding the parent node indices and a vector-Jacobian product closure
(the locally stored partials). Nodes are appended in evaluation order, so the
recording is acyclic and a single reverse sweep yields all gradients.

Only what the recurrent inference machine and its loss need is implemented:
elementwise arithmetic with broadcasting, activations, reductions, channel
concatenation, same-padded 2D convolution, valid separable filtering, complex
magnitude and user-supplied linear operators. Convolutions use the
(channels, batch, height, width) layout.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = [
    "BranchLog",
    "Tape",
    "Var",
    "absolute",
    "concat",
    "conv2d",
    "filter_valid",
    "linear",
    "magnitude",
    "mean",
    "relu",
    "sigmoid",
    "tanh",
    "total",
]


class _Node:
    __slots__ = ("parents", "vjp")

    def __init__(self, parents, vjp):
        self.parents = parents
        self.vjp = vjp


class _Scratch:
    """Growable flat float buffer reused by convolutions on one tape.

    Kept separate from the tape so backward closures can hold it without
    forming a reference cycle through the node list.
    """

    def __init__(self):
        self.buffer = np.empty(0)

    def __call__(self, size):
        if self.buffer.size < size:
            self.buffer = np.empty(size)
        return self.buffer[:size]


class BranchLog:
    """Branch decisions taken at the kinks of ``relu`` and ``absolute``.

    A fresh log records the pattern (positive mask or sign) of every kink a tape
    evaluates. A log built from a recorded list replays it instead, so another
    evaluation follows the same smooth piece of a piecewise-smooth function.
    """

    def __init__(self, masks=None):
        self.replaying = masks is not None
        self.masks = list(masks) if masks is not None else []
        self._cursor = 0

    def resolve(self, mask):
        if not self.replaying:
            self.masks.append(mask)
            return mask
        recorded = self.masks[self._cursor]
        self._cursor += 1
        return recorded


class Tape:
    """Operation recorder.

    With ``record=False`` operations are evaluated but nothing is stored, which
    is how inference runs without holding intermediate buffers. An optional
    :class:`BranchLog` records or replays the kink decisions.
    """

    def __init__(self, record=True, branches=None):
        self.record = record
        self.branches = branches
        self.nodes = []
        self.scratch = _Scratch()

    def __len__(self):
        return len(self.nodes)

    def variable(self, value):
        """Register a leaf (a parameter or an input to differentiate against)."""
        return self._push(np.asarray(value, dtype=float), (), None)

    def _push(self, value, parents, vjp):
        if not self.record:
            return Var(self, -1, value)
        self.nodes.append(_Node(parents, vjp))
        return Var(self, len(self.nodes) - 1, value)

    def apply(self, value, inputs, vjp):
        """Record ``value`` computed from ``inputs``; ``vjp(g)`` returns one
        cotangent (or ``None``) per input, in order."""
        if not self.record:
            return Var(self, -1, value)
        return self._push(value, tuple(v.index for v in inputs), vjp)

    def gradient(self, output, wrt):
        """Gradients of the scalar ``output`` with respect to each Var in ``wrt``."""
        if not self.record:
            raise RuntimeError("cannot differentiate through a tape created with record=False")
        if np.size(output.value) != 1:
            raise ValueError("gradient() needs a scalar output")
        grads = [None] * (output.index + 1)
        grads[output.index] = np.ones_like(output.value)
        wanted = {v.index for v in wrt}
        keep = {}
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            if i in wanted:
                keep[i] = g
            node = self.nodes[i]
            grads[i] = None
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or parent < 0:
                    continue
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        return [keep[v.index] if v.index in keep else np.zeros_like(v.value) for v in wrt]


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A value on a tape. Supports ``+ - * /`` and unary minus against Vars,
    arrays and scalars, with numpy broadcasting."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"

    def _binary(self, other, fn, vjp_self, vjp_other):
        if isinstance(other, Var):
            value = fn(self.value, other.value)
            a_shape, b_shape = self.value.shape, other.value.shape

            def vjp(g):
                return _unbroadcast(vjp_self(g), a_shape), _unbroadcast(vjp_other(g), b_shape)

            return self.tape.apply(value, (self, other), vjp)
        value = fn(self.value, other)
        shape = self.value.shape
        return self.tape.apply(value, (self,), lambda g: (_unbroadcast(vjp_self(g), shape),))

    def __add__(self, other):
        return self._binary(other, np.add, lambda g: g, lambda g: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g: g, lambda g: -g)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a = self.value
        b = other.value if isinstance(other, Var) else other
        return self._binary(other, np.multiply, lambda g: g * b, lambda g: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a = self.value
        b = other.value if isinstance(other, Var) else other
        return self._binary(other, np.divide, lambda g: g / b, lambda g: -g * a / (b * b))

    def __rtruediv__(self, other):
        b = self.value
        value = other / b
        return self.tape.apply(value, (self,), lambda g: (_unbroadcast(-g * value / b, b.shape),))

    def __neg__(self):
        return self.tape.apply(-self.value, (self,), lambda g: (-g,))

    def __getitem__(self, index):
        value = self.value[index]
        shape = self.value.shape

        def vjp(g):
            out = np.zeros(shape)
            out[index] += g
            return (out,)

        return self.tape.apply(value, (self,), vjp)


def _branch(x, mask):
    return mask if x.tape.branches is None else x.tape.branches.resolve(mask)


def relu(x):
    positive = _branch(x, x.value > 0)
    return x.tape.apply(np.where(positive, x.value, 0.0), (x,), lambda g: (g * positive,))


def sigmoid(x):
    value = np.multiply(x.value, 0.5)
    np.tanh(value, out=value)
    value *= 0.5
    value += 0.5
    return x.tape.apply(value, (x,), lambda g: (g * value * (1.0 - value),))


def tanh(x):
    value = np.tanh(x.value)
    return x.tape.apply(value, (x,), lambda g: (g * (1.0 - value * value),))


def absolute(x):
    sign = _branch(x, np.sign(x.value))
    return x.tape.apply(x.value * sign, (x,), lambda g: (g * sign,))


def total(x):
    shape = x.value.shape
    return x.tape.apply(np.sum(x.value), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x):
    shape = x.value.shape
    n = x.value.size
    return x.tape.apply(np.mean(x.value), (x,), lambda g: (np.full(shape, g / n),))


def concat(parts, axis=0):
    """Concatenate Vars (and constant arrays) along ``axis``."""
    values = [p.value if isinstance(p, Var) else np.asarray(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]
    tape = next(p.tape for p in parts if isinstance(p, Var))
    inputs = [p for p in parts if isinstance(p, Var)]
    is_var = [isinstance(p, Var) for p in parts]

    def vjp(g):
        pieces = np.split(g, sizes, axis=axis)
        return tuple(piece for piece, keep in zip(pieces, is_var) if keep)

    return tape.apply(np.concatenate(values, axis=axis), inputs, vjp)


def magnitude(x):
    """``sqrt(x[0]**2 + x[1]**2)`` for a stacked (real, imag) Var; the
    derivative is taken as zero where the magnitude vanishes."""
    re, im = x.value[0], x.value[1]
    value = np.sqrt(re * re + im * im)
    safe = np.where(value > 0, value, 1.0)
    unit = np.stack([np.where(value > 0, re / safe, 0.0), np.where(value > 0, im / safe, 0.0)])
    return x.tape.apply(value, (x,), lambda g: (unit * g,))


def linear(x, apply, transpose, offset=None):
    """Affine map ``apply(x) + offset`` with the given transpose for the
    backward pass."""
    value = apply(x.value)
    if offset is not None:
        value = value + offset
    return x.tape.apply(value, (x,), lambda g: (transpose(g),))


def filter_valid(x, taps):
    """Valid-mode separable filtering with symmetric ``taps`` over the last two
    axes; the transpose is a zero-padded filtering of the cotangent."""
    taps = np.asarray(taps, dtype=float)
    half = len(taps) // 2
    shape = x.value.shape

    def forward(a):
        out = ndimage.correlate1d(a, taps, axis=-1, mode="constant")
        out = ndimage.correlate1d(out, taps, axis=-2, mode="constant")
        return out[..., half : a.shape[-2] - half, half : a.shape[-1] - half]

    def vjp(g):
        full = np.zeros(shape)
        full[..., half : shape[-2] - half, half : shape[-1] - half] = g
        out = ndimage.correlate1d(full, taps[::-1], axis=-1, mode="constant")
        return (ndimage.correlate1d(out, taps[::-1], axis=-2, mode="constant"),)

    return x.tape.apply(forward(x.value), (x,), vjp)


_BLOCK_ELEMENTS = 1 << 17


def _pad(x, p):
    c, b, h, w = x.shape
    padded = np.zeros((c, b, h + 2 * p, w + 2 * p))
    padded[:, :, p : p + h, p : p + w] = x
    return padded


def _row_blocks(x, k, scratch):
    """Yield ``(r0, r1, cols)`` where ``cols`` holds the (C*k*k, B*(r1-r0)*W)
    patch matrix of output rows ``r0:r1``.

    Blocks are sized to stay cache resident; ``cols`` is a view into
    ``scratch`` and is overwritten by the next block.
    """
    c, b, h, w = x.shape
    padded = _pad(x, k // 2)
    rows = max(1, min(h, _BLOCK_ELEMENTS // (c * k * k * b * w)))
    buf = scratch(c * k * k * b * rows * w).reshape(c, k, k, b, rows, w)
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        cols = buf[:, :, :, :, : r1 - r0]
        for dy in range(k):
            for dx in range(k):
                cols[:, dy, dx] = padded[:, :, r0 + dy : r1 + dy, dx : dx + w]
        yield r0, r1, cols.reshape(c * k * k, -1)


def _correlate(x, w2, k, scratch):
    """Same-padded correlation of (C, B, H, W) ``x`` with (C_out, C*k*k) weights."""
    _, b, h, w = x.shape
    out = np.empty((w2.shape[0], b, h, w))
    for r0, r1, cols in _row_blocks(x, k, scratch):
        out[:, :, r0:r1] = (w2 @ cols).reshape(-1, b, r1 - r0, w)
    return out


def _col2im(cols, shape, k):
    """Adjoint of patch extraction: scatter-add (C*k*k, B*H*W) rows onto the image."""
    c, b, h, w = shape
    p = k // 2
    cols = cols.reshape(c, k, k, b, h, w)
    padded = np.zeros((c, b, h + 2 * p, w + 2 * p))
    for dy in range(k):
        for dx in range(k):
            padded[:, :, dy : dy + h, dx : dx + w] += cols[:, dy, dx]
    return padded[:, :, p : p + h, p : p + w]


def conv2d(x, weight, bias):
    """Same-padded, stride-1 cross-correlation.

    Patch matrices are built block by block in a scratch buffer owned by the
    tape and rebuilt during the backward pass rather than stored.

    Args:
        x: Var of shape (C_in, B, H, W).
        weight: Var of shape (C_out, C_in, k, k) with odd ``k``.
        bias: Var of shape (C_out,).

    Returns:
        Var of shape (C_out, B, H, W).
    """
    scratch = x.tape.scratch
    w_shape = weight.value.shape
    c_out, c_in, k, _ = w_shape
    shape = x.value.shape
    x_value, w_value = x.value, weight.value
    w2 = w_value.reshape(c_out, c_in * k * k)
    out = _correlate(x_value, w2, k, scratch)
    out += bias.value[:, None, None, None]

    def vjp(g):
        b, w = shape[1], shape[3]
        grad_w = np.zeros_like(w2)
        for r0, r1, cols in _row_blocks(x_value, k, scratch):
            grad_w += g[:, :, r0:r1].reshape(c_out, b * (r1 - r0) * w) @ cols.T
        grad_b = g.sum(axis=(1, 2, 3))
        if c_in < c_out:
            grad_x = _col2im(w2.T @ g.reshape(c_out, -1), shape, k)
        else:
            # transposed convolution: correlate with the flipped, channel-swapped kernel
            flipped = w_value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, c_out * k * k)
            grad_x = _correlate(g, flipped, k, scratch)
        return grad_x, grad_w.reshape(w_shape), grad_b

    return x.tape.apply(out, (x, weight, bias), vjp)
