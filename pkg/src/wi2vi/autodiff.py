"""Minimal dense-tensor kernel with tape-based reverse-mode differentiation.

Every layer primitive accepts either a single example (``[C][H][W]`` for the
image ops) or a batch with a leading axis (``[N][C][H][W]``). Operations are
recorded on the active :class:`Tape` only when at least one input requires a
gradient, so inference runs without bookkeeping.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """Dense n-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations; recording order is a topological order.

    Use as a context manager: operations executed inside ``with tape:`` are
    appended to it.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = Tape.active()
        if tape is not None:
            tape.nodes.append(_Node(inputs, out, backward))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, which makes summing
    over several independently recorded shards an explicit, ordered reduction.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in produced:
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
            else:
                inp.grad += gi
    # the loss itself may be a leaf (e.g. backward on an input tensor)
    if id(loss) not in produced and loss.requires_grad:
        g = grads.get(id(loss))
        if g is not None:
            loss.grad = g if loss.grad is None else loss.grad + g


def _as_batch(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ValueError(f"expected {ndim - 1}-D or batched {ndim}-D input, got shape {x.shape}")
    return x, False


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# --- elementwise and structural ops -----------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(src),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = Tensor(np.asarray(x.data.sum()))
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean()))
    return _record(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (y > 0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)
    out = Tensor(x.data * scale)
    return _record(out, (x,), lambda g: (g * scale,))


# --- layer primitives ---------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """Output length of a strided, padded convolution (floor rounding)."""
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"conv output would be empty: size={size} kernel={kernel} stride={stride} pad={pad}"
        )
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` plus per-channel ``bias``.

    Output size uses floor rounding, ``(H + 2*pad - kh) // stride + 1``, so
    trailing input rows that do not fill a whole stride are ignored.
    """
    xb, squeeze = _as_batch(x.data, 4)
    c_out, c_in, kh, kw = weight.shape
    if c_in != xb.shape[1]:
        raise ValueError(f"conv2d: input has {xb.shape[1]} channels, weight expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    # narrowing layers are memory-bound under im2col; the shifted-matmul form
    # avoids materialising the 9x column matrix
    impl = _conv_shifted if c_out < c_in else _conv_im2col
    y, grad_fn = impl(xb, weight.data, bias.data, sh, sw, ph, pw, x.requires_grad)
    out = Tensor(y[0] if squeeze else y)

    def _backward(g):
        dx, dw, db = grad_fn(g[None] if squeeze else g)
        if dx is not None and squeeze:
            dx = dx[0]
        return dx, dw, db

    return _record(out, (x, weight, bias), _backward)


def _conv_im2col(xb, w, b, sh, sw, ph, pw, need_dx):
    n, c, h, wd = xb.shape
    c_out, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(wd, kw, sw, pw)
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xb
    # column matrix laid out [c, kh, kw, n, ho, wo]: every copy moves whole
    # contiguous spatial runs
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw].transpose(1, 0, 2, 3)
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = w.reshape(c_out, -1)
    res = wmat @ cols
    res += b[:, None]
    y = np.ascontiguousarray(res.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3))

    def grad_fn(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, n * ho * wo)
        dw = (gmat @ cols.T).reshape(w.shape)
        db = gmat.sum(axis=1)
        if not need_dx:
            return None, dw, db
        dcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
        dxp = np.zeros((c, n) + xp.shape[2:], dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += dcols[:, i, j]
        dx = np.ascontiguousarray(dxp[:, :, ph : ph + h, pw : pw + wd].transpose(1, 0, 2, 3))
        return dx, dw, db

    return y, grad_fn


def _conv_shifted(xb, w, b, sh, sw, ph, pw, need_dx):
    """Convolution as a sum of kh*kw matmuls over stride-phase grids.

    The padded input is split into ``sh*sw`` phase grids of shape
    ``[c, n*hq*wq]``; kernel tap ``(i, j)`` reads phase ``(i % sh, j % sw)``
    at flat offset ``(i // sh) * wq + j // sw``. Grid positions past the
    valid output are computed and discarded.
    """
    n, c, h, wd = xb.shape
    c_out, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(wd, kw, sw, pw)
    hq = ho + (kh - 1) // sh
    wq = wo + (kw - 1) // sw
    flat = n * hq * wq
    span = flat - ((kh - 1) // sh) * wq - (kw - 1) // sw

    phases = np.zeros((sh, sw, c, n, hq, wq), dtype=xb.dtype)
    xt = xb.transpose(1, 0, 2, 3)
    blocks = []
    for a in range(sh):
        for bb in range(sw):
            r0 = max(0, -((a - ph) // sh))
            r1 = min(hq, (h - 1 + ph - a) // sh + 1)
            c0 = max(0, -((bb - pw) // sw))
            c1 = min(wq, (wd - 1 + pw - bb) // sw + 1)
            if r1 <= r0 or c1 <= c0:
                continue
            src = (
                slice(r0 * sh + a - ph, (r1 - 1) * sh + a - ph + 1, sh),
                slice(c0 * sw + bb - pw, (c1 - 1) * sw + bb - pw + 1, sw),
            )
            phases[a, bb, :, :, r0:r1, c0:c1] = xt[:, :, src[0], src[1]]
            blocks.append((a, bb, slice(r0, r1), slice(c0, c1), src))
    pf = phases.reshape(sh, sw, c, flat)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    offsets = [((i, j), (i % sh, j % sw), (i // sh) * wq + j // sw) for i in range(kh) for j in range(kw)]

    acc = np.zeros((c_out, flat), dtype=xb.dtype)
    for (i, j), (a, bb), off in offsets:
        acc[:, :span] += taps[i, j] @ pf[a, bb, :, off : off + span]
    y = acc.reshape(c_out, n, hq, wq)[:, :, :ho, :wo] + b[:, None, None, None]
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))

    def grad_fn(g):
        grid = np.zeros((c_out, n, hq, wq), dtype=g.dtype)
        grid[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gm = grid.reshape(c_out, flat)[:, :span]
        dtaps = np.empty_like(taps)
        dpf = np.zeros_like(pf) if need_dx else None
        for (i, j), (a, bb), off in offsets:
            dtaps[i, j] = gm @ pf[a, bb, :, off : off + span].T
            if need_dx:
                dpf[a, bb, :, off : off + span] += taps[i, j].T @ gm
        dw = np.ascontiguousarray(dtaps.transpose(2, 3, 0, 1))
        db = g.sum(axis=(0, 2, 3))
        if not need_dx:
            return None, dw, db
        dph = dpf.reshape(sh, sw, c, n, hq, wq)
        dxt = np.zeros((c, n, h, wd), dtype=g.dtype)
        for a, bb, rows, cols_, src in blocks:
            dxt[:, :, src[0], src[1]] += dph[a, bb, :, :, rows, cols_]
        return np.ascontiguousarray(dxt.transpose(1, 0, 2, 3)), dw, db

    return y, grad_fn


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-example, per-channel normalization over the spatial axes."""
    xb, squeeze = _as_batch(x.data, 4)
    mu = xb.mean(axis=(2, 3), keepdims=True)
    xc = xb - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g4 = gamma.data.reshape(1, -1, 1, 1)
    y = xhat * g4 + beta.data.reshape(1, -1, 1, 1)
    out = Tensor(y[0] if squeeze else y)

    def _backward(g):
        gb = g[None] if squeeze else g
        dgamma = (gb * xhat).sum(axis=(0, 2, 3))
        dbeta = gb.sum(axis=(0, 2, 3))
        dxhat = gb * g4
        dx = inv * (
            dxhat
            - dxhat.mean(axis=(2, 3), keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        )
        return (dx[0] if squeeze else dx), dgamma, dbeta

    return _record(out, (x, gamma, beta), _backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``weight @ x + bias`` for ``x`` of shape ``[D_in]`` or ``[N][D_in]``."""
    xb, squeeze = _as_batch(x.data, 2)
    if xb.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {xb.shape[1]} != weight in-dim {weight.shape[1]}")
    y = xb @ weight.data.T + bias.data
    out = Tensor(y[0] if squeeze else y)

    def _backward(g):
        gb = g[None] if squeeze else g
        dx = gb @ weight.data
        return (dx[0] if squeeze else dx), gb.T @ xb, gb.sum(axis=0)

    return _record(out, (x, weight, bias), _backward)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    y = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    out = Tensor(y)

    def _backward(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _record(out, (x,), _backward)


def weighted_l1(pred: Tensor, target, weight, mask) -> Tensor:
    """Masked, weighted mean absolute error.

    ``loss = weight * sum(mask * |pred - target|) / sum(mask)``. For a batch
    ``[N][H][W]`` the result is the vector of per-example losses; ``target``,
    ``weight`` and ``mask`` are constants (arrays or tensors).
    """
    t = np.asarray(getattr(target, "data", target), dtype=pred.data.dtype)
    msk = np.asarray(getattr(mask, "data", mask), dtype=pred.data.dtype)
    wt = np.asarray(getattr(weight, "data", weight), dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"weighted_l1: target shape {t.shape} != prediction shape {pred.shape}")
    msk = np.broadcast_to(msk, pred.shape)
    denom = msk.sum(axis=(-2, -1))
    if np.any(denom <= 0):
        raise ValueError("weighted_l1: mask sums to zero")
    diff = pred.data - t
    scale = (wt / denom)[..., None, None]
    val = scale[..., 0, 0] * (msk * np.abs(diff)).sum(axis=(-2, -1))
    out = Tensor(np.asarray(val))
    sign = np.sign(diff)

    def _backward(g):
        return (np.asarray(g)[..., None, None] * scale * msk * sign,)

    return _record(out, (pred,), _backward)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
