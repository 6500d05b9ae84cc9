"""Dense-tensor numerics with reverse-mode automatic differentiation.

The engine is deliberately small: float32/float64 numpy buffers in NCHW
layout, eager forward execution, and gradient closures hung off output
tensors. `backward` linearizes everything reachable from the loss into a
Tape (a topologically ordered node list) and replays it once in reverse.
There is no global state; a tensor graph is owned by whoever built it.

Convolution is cross-correlation (no kernel flip). 1x1 stride-1 convs take
a reshaped-matmul fast path; everything else goes through im2col built by
slicing over kernel offsets, so the heavy lifting stays inside BLAS.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TapeNode",
    "Tape",
    "add",
    "backward",
    "batch_norm",
    "concat_channels",
    "conv2d",
    "max_pool2",
    "mse_loss",
    "relu",
    "scale",
    "tensor_sum",
    "upsample_nearest2",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A dense array plus an optional gradient and tape linkage.

    `data` is always float32 or float64. `grad` is populated by `backward`
    on reachable leaf tensors (those not produced by a recorded op) whose
    `requires_grad` is set; it is an ndarray of the same shape as `data`, or
    None before any backward pass. Gradients of interior results exist only
    transiently while the tape replays.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def detach(self) -> "Tensor":
        """A view of the same data with no grad requirement and no tape linkage."""
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if self.node is not None:
            flags.append(self.node.kind)
        tag = (" " + ",".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


class TapeNode:
    """One recorded operation: kind, parent tensors, and a backward closure.

    The closure receives the upstream gradient for the node's output and
    returns one gradient array (or None) per parent, aligned positionally.
    Nodes reference parents only, never their own output tensor: the recorded
    graph stays acyclic so activation memory is reclaimed by reference
    counting the moment the output tensor goes out of scope.
    """

    __slots__ = ("kind", "parents", "backward_fn")

    def __init__(self, kind: str, parents: tuple["Tensor", ...],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.kind = kind
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Topologically ordered node list for one reachable subgraph.

    Invariants: parents precede children in `nodes`, each node appears once,
    and a reverse replay therefore visits every node exactly once with its
    output gradient fully accumulated before use.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[TapeNode]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: "Tensor") -> "Tape":
        """Linearize the ancestry of `root` in topological order (iterative DFS)."""
        if root.node is None:
            return cls([])
        nodes: list[TapeNode] = []
        seen: set[int] = set()
        # Stack entries are (node, next parent index to visit).
        stack: list[list] = [[root.node, 0]]
        seen.add(id(root.node))
        while stack:
            top = stack[-1]
            node, idx = top
            if idx < len(node.parents):
                top[1] += 1
                pnode = node.parents[idx].node
                if pnode is not None and id(pnode) not in seen:
                    seen.add(id(pnode))
                    stack.append([pnode, 0])
            else:
                stack.pop()
                nodes.append(node)
        return cls(nodes)

    def run_backward(self, seed: np.ndarray) -> None:
        # Flowing gradients live in their own map, keyed by node; `.grad` is
        # only ever an accumulation target on leaves. Reading `.grad` back as
        # the propagation buffer would double-count on repeated backward
        # passes through the same graph.
        flowing: dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            out_grad = flowing.pop(id(node), None)
            if out_grad is None:
                continue  # not reachable from the seeded root
            grads = node.backward_fn(out_grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                pnode = parent.node
                if pnode is None:  # leaf: accumulate directly
                    parent.grad = g if parent.grad is None else parent.grad + g
                else:
                    key = id(pnode)
                    have = flowing.get(key)
                    flowing[key] = g if have is None else have + g


def backward(loss: Tensor) -> None:
    """Accumulate gradients of `loss` into every reachable requires_grad tensor.

    The loss must be a scalar recorded on the tape. Gradients add onto any
    existing `grad` buffers; callers zero them between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ValueError("backward needs a loss recorded on the tape "
                         "(no input required a gradient)")
    tape = Tape.from_root(loss)
    tape.run_backward(np.ones_like(loss.data))


def _finalize(out: Tensor, kind: str, parents: tuple[Tensor, ...],
              backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(kind, parents, backward_fn)
    return out


def _check_same_dtype(op: str, **named) -> np.dtype:
    dtypes = {name: t.dtype for name, t in named.items()}
    uniq = set(dtypes.values())
    if len(uniq) > 1:
        raise ValueError(f"{op}: mixed dtypes {dtypes}")
    return uniq.pop()


# ---------------------------------------------------------------------------
# convolution

def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    n, c, _, _ = xpad.shape
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=xpad.dtype)
    for i in range(kh):
        hi = i + stride * out_h
        for j in range(kw):
            wj = j + stride * out_w
            cols[:, :, i, j] = xpad[:, :, i:hi:stride, j:wj:stride]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def _col2im(dcols: np.ndarray, padded_shape: tuple[int, ...], kh: int, kw: int,
            stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c, _, _ = padded_shape
    dx = np.zeros(padded_shape, dtype=dcols.dtype)
    view = dcols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        hi = i + stride * out_h
        for j in range(kw):
            wj = j + stride * out_w
            dx[:, :, i:hi:stride, j:wj:stride] += view[:, :, i, j]
    return dx


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlate `x` (N,Cin,H,W) with `w` (Cout,Cin,kh,kw) plus bias.

    Output extent must divide exactly: (H + 2*pad - kh) % stride == 0 and the
    result must be >= 1, otherwise the call is rejected. No kernel flip.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: need 4d input and kernel, got {x.shape} and {w.shape}")
    if b.data.ndim != 1:
        raise ValueError(f"conv2d: bias must be 1d, got shape {b.shape}")
    n, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError(f"conv2d: input has {cin} channels but kernel expects {cin_w} "
                         f"(input {x.shape}, kernel {w.shape})")
    if b.shape[0] != cout:
        raise ValueError(f"conv2d: bias has {b.shape[0]} entries for {cout} output channels")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} pad={pad}")
    _check_same_dtype("conv2d", x=x, w=w, b=b)
    num_h = h + 2 * pad - kh
    num_w = wdt + 2 * pad - kw
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ValueError(
            f"conv2d: non-integer output extent for input {h}x{wdt}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}")
    out_h = num_h // stride + 1
    out_w = num_w // stride + 1

    fast_1x1 = kh == 1 and kw == 1 and stride == 1 and pad == 0
    w2d = w.data.reshape(cout, cin * kh * kw)
    if fast_1x1:
        x_flat = x.data.reshape(n, cin, h * wdt)
        out_data = np.matmul(w2d, x_flat).reshape(n, cout, h, wdt)
        cols = None
        padded_shape = None
    else:
        xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        padded_shape = xpad.shape
        cols = _im2col(xpad, kh, kw, stride, out_h, out_w)
        out_data = np.matmul(w2d, cols).reshape(n, cout, out_h, out_w)
    out_data += b.data[:, None, None]
    out = Tensor(out_data)

    def backward_fn(g: np.ndarray) -> tuple:
        gm = np.ascontiguousarray(g.reshape(n, cout, out_h * out_w))
        gb = gm.sum(axis=(0, 2)) if b.requires_grad else None
        # Weight grad as N small gemms: BLAS takes the transposed views
        # directly, avoiding tensordot's two full-activation copies.
        if fast_1x1:
            gw = None
            if w.requires_grad:
                x_flat = x.data.reshape(n, cin, h * wdt)
                gw = np.matmul(gm, x_flat.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            gx = None
            if x.requires_grad:
                gx = np.matmul(w2d.T, gm).reshape(x.shape)
            return gx, gw, gb
        gw = None
        if w.requires_grad:
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(w2d.T, gm)
            dpad = _col2im(dcols, padded_shape, kh, kw, stride, out_h, out_w)
            gx = dpad[:, :, pad:pad + h, pad:pad + wdt] if pad else dpad
        return gx, gw, gb

    return _finalize(out, "conv2d", (x, w, b), backward_fn)


# ---------------------------------------------------------------------------
# normalization and activations

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.9, eps: float = 1e-5,
               update_stats: bool | None = None) -> Tensor:
    """Per-channel batch normalization over (N,H,W) with affine parameters.

    Train mode normalizes by biased batch statistics and, unless
    `update_stats` is False, folds them into the running buffers in place:
    r <- momentum*r + (1-momentum)*batch. Eval mode normalizes by the running
    buffers, which then act as constants for the backward pass. Gradients are
    exact in both modes (train mode differentiates through the statistics).
    """
    if x.data.ndim != 4:
        raise ValueError(f"batch_norm: need 4d input, got {x.shape}")
    if eps <= 0:
        raise ValueError(f"batch_norm: eps must be positive, got {eps}")
    n, c, h, w = x.shape
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ValueError(f"batch_norm: {name} has shape {t.shape}, expected ({c},)")
    for name, a in (("running_mean", running_mean), ("running_var", running_var)):
        if a.shape != (c,):
            raise ValueError(f"batch_norm: {name} has shape {a.shape}, expected ({c},)")
    _check_same_dtype("batch_norm", x=x, gamma=gamma, beta=beta)

    count = n * h * w
    if train:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_stats is None or update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    # Fused y = x*scale + shift; the normalized activations are rebuilt in
    # the backward pass (which needs them anyway) instead of stored here.
    scale = gamma.data * inv_std
    shift = beta.data - mean * scale
    out_data = x.data * scale[:, None, None]
    out_data += shift[:, None, None]
    out = Tensor(out_data)

    def backward_fn(g: np.ndarray) -> tuple:
        xhat = None
        if gamma.requires_grad or (x.requires_grad and train):
            xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data[:, None, None]
            if train:
                sum_gh = gh.sum(axis=(0, 2, 3), keepdims=True)
                sum_gh_xhat = (gh * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv_std[:, None, None] / count) * (
                    count * gh - sum_gh - xhat * sum_gh_xhat)
            else:
                gx = gh * inv_std[:, None, None]
        return gx, ggamma, gbeta

    return _finalize(out, "batch_norm", (x, gamma, beta), backward_fn)


def relu(x: Tensor, trace: list | None = None) -> Tensor:
    """Elementwise max(x, 0). Gradient passes only where x > 0.

    When `trace` is a list, the sign pattern of the input is appended as
    packed bytes; finite-difference checking uses this to detect kink
    crossings between perturbed evaluations.
    """
    if trace is not None:
        trace.append(np.packbits(x.data > 0).tobytes())
    out = Tensor(np.maximum(x.data, 0))

    def backward_fn(g: np.ndarray) -> tuple:
        return (np.where(x.data > 0, g, 0),) if x.requires_grad else (None,)

    return _finalize(out, "relu", (x,), backward_fn)


# ---------------------------------------------------------------------------
# resolution changes

def max_pool2(x: Tensor, trace: list | None = None) -> Tensor:
    """2x2 max pooling with stride 2; H and W must be even.

    Ties route the gradient to the first occurrence in row-major window
    order. With `trace` set, the argmax pattern is recorded for kink
    detection, mirroring `relu`.
    """
    n, c, h, w = x.shape
    if x.data.ndim != 4 or h % 2 or w % 2:
        raise ValueError(f"max_pool2: need even 4d spatial dims, got {x.shape}")
    windows = (x.data.reshape(n, c, h // 2, 2, w // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, h // 2, w // 2, 4))
    idx = windows.argmax(axis=-1)
    if trace is not None:
        trace.append(idx.astype(np.uint8).tobytes())
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    def backward_fn(g: np.ndarray) -> tuple:
        if not x.requires_grad:
            return (None,)
        buf = np.zeros_like(windows)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        gx = (buf.reshape(n, c, h // 2, w // 2, 2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        return (gx,)

    return _finalize(out, "max_pool2", (x,), backward_fn)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; backward sums each 2x2 block."""
    if x.data.ndim != 4:
        raise ValueError(f"upsample_nearest2: need 4d input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3))

    def backward_fn(g: np.ndarray) -> tuple:
        if not x.requires_grad:
            return (None,)
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _finalize(out, "upsample_nearest2", (x,), backward_fn)


# ---------------------------------------------------------------------------
# joins and reductions

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; N, H, W must agree."""
    xs = list(xs)
    if not xs:
        raise ValueError("concat_channels: empty input list")
    first = xs[0].shape
    for t in xs[1:]:
        s = t.shape
        if len(s) != 4 or s[0] != first[0] or s[2:] != first[2:]:
            raise ValueError(f"concat_channels: incompatible shapes "
                             f"{[tuple(t.shape) for t in xs]}")
    _check_same_dtype("concat_channels", **{f"x{i}": t for i, t in enumerate(xs)})
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    sizes = [t.shape[1] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> tuple:
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(xs))

    return _finalize(out, "concat_channels", tuple(xs), backward_fn)


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if x.shape != y.shape:
        raise ValueError(f"add: shape mismatch {x.shape} vs {y.shape}")
    _check_same_dtype("add", x=x, y=y)
    out = Tensor(x.data + y.data)

    def backward_fn(g: np.ndarray) -> tuple:
        return (g if x.requires_grad else None,
                g if y.requires_grad else None)

    return _finalize(out, "add", (x, y), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient with respect to c)."""
    c = float(c)
    out = Tensor(x.data * c)

    def backward_fn(g: np.ndarray) -> tuple:
        return (g * c,) if x.requires_grad else (None,)

    return _finalize(out, "scale", (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum all elements to a scalar."""
    out = Tensor(x.data.sum())

    def backward_fn(g: np.ndarray) -> tuple:
        if not x.requires_grad:
            return (None,)
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _finalize(out, "tensor_sum", (x,), backward_fn)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements; target must not require grad."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    if target.requires_grad:
        raise ValueError("mse_loss: target must not require grad (detach it)")
    _check_same_dtype("mse_loss", pred=pred, target=target)
    diff = pred.data - target.data
    out = Tensor(np.mean(diff * diff))

    def backward_fn(g: np.ndarray) -> tuple:
        if not pred.requires_grad:
            return (None, None)
        return (g * diff * (2.0 / diff.size), None)

    return _finalize(out, "mse_loss", (pred, target), backward_fn)
