"""Minimal reverse-mode automatic differentiation over NCHW arrays.

Only the operations needed by the denoising U-Net are provided: "same"
2-D convolution, ReLU, sigmoid, 2x2 max pooling, 2x2 nearest up-sampling,
channel concatenation, inverted dropout and the MSE loss. There is no
broadcasting and no higher-order differentiation.

Every operation on a tensor that requires a gradient appends a
:class:`TapeNode` recording its inputs, a backward closure and whatever
forward context the closure needs (pooling argmax, dropout mask, im2col
buffers). :func:`backward` replays the tape once in reverse topological
order; afterwards the tape is marked consumed and replaying it again raises.

Layout is batch, channel, height, width, row-major, 64-bit by default.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class TapeNode:
    """One recorded forward operation."""

    __slots__ = ("op", "inputs", "backward_fn", "saved", "consumed")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, saved: dict | None = None):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.saved = saved or {}
        self.consumed = False

    def __repr__(self) -> str:
        return f"TapeNode({self.op}, inputs={len(self.inputs)})"


class Tensor:
    """An n-dimensional float array that can take part in differentiation.

    Values are stored read-only; only ``grad`` is mutated, and only by
    :func:`backward` and :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _infer_dtype(data), copy=True, order="C")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        # internal constructor: takes ownership of a freshly computed array
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self) -> Tensor:
        return tensor_sum(self)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return DEFAULT_DTYPE


def _result(arr: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, **saved) -> Tensor:
    out = Tensor._wrap(arr)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(op, inputs, backward_fn, saved)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_4d(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Rows are output pixels (n, y, x); columns are (c, dy, dx)."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    h, w = win.shape[2:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * kh * kw)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int | tuple[int, int] | None = None) -> Tensor:
    """Stride-1 "same" convolution (cross-correlation) with zero padding.

    Args:
        x: input of shape (N, C, H, W).
        kernel: weights of shape (O, C, kh, kw) with odd kh, kw.
        bias: optional per-output-channel bias of shape (O,).
        padding: zero padding per side. Defaults to ``(kh // 2, kw // 2)``;
            any other value would change the spatial size and is rejected.

    Returns:
        Tensor of shape (N, O, H, W).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _check_4d(x, "conv2d input")
    _check_4d(kernel, "conv2d kernel")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"kernel expects {kc} input channels, input has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel spatial extents must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    if padding is not None:
        pad = (padding, padding) if isinstance(padding, int) else tuple(padding)
        if pad != (ph, pw):
            raise ShapeError(f"padding {pad} does not give a same-size output for a {kh}x{kw} kernel")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"bias must have shape ({o},), got {bias.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw)
    wmat = kernel.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, h, w, o).transpose(0, 3, 1, 2)

    def backward_fn(g: np.ndarray):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        gx = gw = gb = None
        if kernel.requires_grad:
            gw = (gmat.T @ cols).reshape(o, c, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        if x.requires_grad:
            # full correlation of the output gradient with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gx = (_im2col(gp, kh, kw) @ flipped.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, "conv2d", inputs, backward_fn, cols=cols)


# ---------------------------------------------------------------------------
# elementwise


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), "relu", (x,),
                   lambda g: (g * mask,), mask=mask)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _result(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two equally shaped tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    return _result(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _result(np.asarray(x.data.sum()), "sum", (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


# ---------------------------------------------------------------------------
# resampling


def maxpool2d(x: Tensor, rate: int = 2) -> Tensor:
    """Non-overlapping ``rate x rate`` max pooling.

    Ties go to the row-major earliest element of each block, which is also
    the only position that receives gradient.
    """
    x = _as_tensor(x)
    _check_4d(x, "maxpool2d input")
    n, c, h, w = x.shape
    if h % rate or w % rate:
        raise ShapeError(f"spatial extents {h}x{w} are not divisible by pooling rate {rate}")
    ho, wo = h // rate, w // rate
    blocks = x.data.reshape(n, c, ho, rate, wo, rate).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, rate * rate)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g: np.ndarray):
        gb = np.zeros((n, c, ho, wo, rate * rate), dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        return (gb.reshape(n, c, ho, wo, rate, rate).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _result(out, "maxpool2d", (x,), backward_fn, argmax=idx)


def upsample2d_nearest(x: Tensor, rate: int = 2) -> Tensor:
    x = _as_tensor(x)
    _check_4d(x, "upsample2d input")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, rate, axis=2), rate, axis=3)

    def backward_fn(g: np.ndarray):
        return (g.reshape(n, c, h, rate, w, rate).sum(axis=(3, 5)),)

    return _result(out, "upsample2d", (x,), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_4d(a, "concat input")
    _check_4d(b, "concat input")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _result(out, "concat", (a, b), lambda g: (g[:, :ca], g[:, ca:]))


# ---------------------------------------------------------------------------
# regularisation and loss


def dropout(x: Tensor, rate: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: zero a ``rate`` fraction of units, rescale survivors.

    The mask is drawn from a Philox stream keyed by ``seed`` so the same seed
    always disables the same units. Outside training, or with ``rate == 0``,
    the input tensor itself is returned.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.Philox(key=seed))
    keep = rng.random(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    return _result(x.data * mask, "dropout", (x,), lambda g: (g * mask,), mask=keep)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss needs equal shapes, got {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    loss = np.asarray(np.mean(diff * diff))

    def backward_fn(g: np.ndarray):
        gp = g * 2.0 * diff / count
        return gp, -gp

    return _result(loss, "mse_loss", (pred, target), backward_fn)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in reversed(t.node.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _spent(g):
    raise ContractError("tape already consumed")


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that requires it.

    Raises:
        ContractError: if ``loss`` is not a single-element tensor, if the
            tape below it was already consumed by an earlier call, or if a
            leaf still holds a gradient from a previous pass.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    for t in order:
        if t.node is not None and t.node.consumed:
            raise ContractError(f"tape already consumed at {t.node.op}; rebuild the graph before calling backward again")
        if t.node is None and t.grad is not None:
            raise ContractError("leaf already holds a gradient; call zero_grad() before a new backward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if t.node is None:
            if g is not None:
                t.grad = g
            continue
        node = t.node
        if g is not None:
            for parent, pg in zip(node.inputs, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else np.ascontiguousarray(pg, dtype=parent.dtype)
        node.consumed = True
        node.saved.clear()
        node.backward_fn = _spent
