"""Dense tensors with tape-based reverse-mode differentiation.

Just enough operator coverage for a convolutional recurrent forecaster:
2D cross-correlation, stride-2 transposed convolution, 2x2 max pooling,
sigmoid/tanh, concatenation/slicing, elementwise arithmetic, and mean/sum
reductions. Tensors hold float32 or float64 numpy arrays; the graph is
recorded per call and discarded with the tensors, and gradients accumulate
until explicitly cleared.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_TENSOR_MAGIC = b"RMT1"

_grad_enabled = True


class no_grad:
    """Context manager that suppresses tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _make(data, parents, backward_fn) -> Tensor:
    """Wrap an op result; record the tape node only when gradients can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor the scalar ``loss`` depends on.

    Gradients accumulate: calling backward twice without clearing doubles
    them exactly.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss was not produced by recorded operations")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(topo):
        if node._backward_fn is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _make(a.data * b.data,
                 (a, b), lambda g: (g * b.data, g * a.data))


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic, clamped to the open unit interval.

    The clamp keeps outputs strictly inside (0, 1) at the tensor's dtype
    resolution even for huge pre-activations, which downstream bounds rely
    on; the gradient uses the clamped output, so it stays consistent.
    """
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    info = np.finfo(z.dtype)
    np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes)))

    return _make(data, tuple(tensors), bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along one axis."""
    if start < 0 or start + length > x.data.shape[axis]:
        raise ValueError(f"narrow: [{start}, {start + length}) outside axis of "
                         f"size {x.data.shape[axis]}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = np.ascontiguousarray(x.data[index])

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[index] = g
        return (dx,)

    return _make(data, (x,), bw)


def _as_4d(arr: np.ndarray):
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise ValueError(f"expected (C,H,W) or (B,C,H,W), got shape {arr.shape}")


def _im2col(xp: np.ndarray, k: int, hout: int, wout: int) -> np.ndarray:
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, hout, wout), xp.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[:, :, u:u + hout, v:v + wout]
    return cols.reshape(b, c * k * k, hout * wout)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           padding: int | None = None) -> Tensor:
    """2D cross-correlation with an odd square kernel; default same-padding."""
    x4, squeeze = _as_4d(x.data)
    if w.data.ndim != 4 or w.data.shape[2] != w.data.shape[3]:
        raise ValueError(f"conv2d: weight must be (Cout, Cin, k, k), got {w.data.shape}")
    cout, cin, k, _ = w.data.shape
    if k % 2 != 1:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if x4.shape[1] != cin:
        raise ValueError(f"conv2d: input has {x4.shape[1]} channels, weight expects {cin}")
    if b is not None and b.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.data.shape} != ({cout},)")
    if w.data.dtype != x.data.dtype:
        raise ValueError(f"conv2d: dtype mismatch {x.data.dtype} vs {w.data.dtype}")
    p = k // 2 if padding is None else padding
    bt, _, h, wd = x4.shape
    hout, wout = h + 2 * p - k + 1, wd + 2 * p - k + 1
    if hout <= 0 or wout <= 0:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p))) if p else x4
    cols = _im2col(xp, k, hout, wout)
    w2 = w.data.reshape(cout, cin * k * k)
    out = np.matmul(w2, cols).reshape(bt, cout, hout, wout)
    if b is not None:
        out += b.data[None, :, None, None]
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g4.reshape(bt, cout, hout * wout))
        # cols are recomputed here: cheaper than holding them for every
        # recorded step of a long sequence.
        xp_l = np.pad(x4, ((0, 0), (0, 0), (p, p), (p, p))) if p else x4
        cols_l = _im2col(xp_l, k, hout, wout)
        dw = np.matmul(g2, cols_l.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        db = g4.sum(axis=(0, 2, 3)) if b is not None else None
        dcols = np.matmul(w2.T, g2).reshape(bt, cin, k, k, hout, wout)
        dxp = np.zeros_like(xp_l)
        for u in range(k):
            for v in range(k):
                dxp[:, :, u:u + hout, v:v + wout] += dcols[:, :, u, v]
        dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        if squeeze:
            dx = dx[0]
        parents_grads = (np.ascontiguousarray(dx), dw) + ((db,) if b is not None else ())
        return parents_grads

    parents = (x, w) + ((b,) if b is not None else ())
    return _make(out, parents, bw)


def transposed_conv2(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Stride-2 transposed convolution with a 2x2 kernel: doubles H and W."""
    if stride != 2:
        raise ValueError("transposed_conv2 supports stride 2 only")
    x4, squeeze = _as_4d(x.data)
    if w.data.ndim != 4 or w.data.shape[2:] != (2, 2):
        raise ValueError(f"transposed_conv2: weight must be (Cin, Cout, 2, 2), got {w.data.shape}")
    cin, cout = w.data.shape[:2]
    if x4.shape[1] != cin:
        raise ValueError(f"transposed_conv2: input has {x4.shape[1]} channels, weight expects {cin}")
    if b is not None and b.data.shape != (cout,):
        raise ValueError(f"transposed_conv2: bias shape {b.data.shape} != ({cout},)")
    bt, _, h, wd = x4.shape
    out = np.einsum("bcij,couv->boiujv", x4, w.data, optimize=True)
    out = out.reshape(bt, cout, 2 * h, 2 * wd)
    if b is not None:
        out = out + b.data[None, :, None, None]
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        g6 = g4.reshape(bt, cout, h, 2, wd, 2)
        dx = np.einsum("boiujv,couv->bcij", g6, w.data, optimize=True)
        dw = np.einsum("bcij,boiujv->couv", x4, g6, optimize=True)
        db = g4.sum(axis=(0, 2, 3)) if b is not None else None
        if squeeze:
            dx = dx[0]
        return (dx, dw) + ((db,) if b is not None else ())

    parents = (x, w) + ((b,) if b is not None else ())
    return _make(out, parents, bw)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route gradient to the first maximum
    in window scan order."""
    x4, squeeze = _as_4d(x.data)
    bt, c, h, wd = x4.shape
    if h % 2 or wd % 2:
        raise ValueError(f"max_pool2 needs even spatial dims, got {h}x{wd}")
    h2, w2 = h // 2, wd // 2
    windows = x4.reshape(bt, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = np.ascontiguousarray(windows).reshape(bt, c, h2, w2, 4)
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def bw(g):
        g4 = g[None] if squeeze else g
        dwin = np.zeros((bt, c, h2, w2, 4), x4.dtype)
        np.put_along_axis(dwin, idx[..., None], g4[..., None], axis=-1)
        dx = dwin.reshape(bt, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.ascontiguousarray(dx).reshape(bt, c, h, wd)
        if squeeze:
            dx = dx[0]
        return (dx,)

    return _make(out, (x,), bw)


def mean(x: Tensor) -> Tensor:
    size = x.data.size
    out = np.asarray(x.data.mean(dtype=x.data.dtype))

    def bw(g):
        return (np.full_like(x.data, g / size),)

    return _make(out, (x,), bw)


def total(x: Tensor) -> Tensor:
    """Sum of all elements (named to avoid shadowing the builtin)."""
    out = np.asarray(x.data.sum(dtype=x.data.dtype))

    def bw(g):
        return (np.full_like(x.data, g),)

    return _make(out, (x,), bw)


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named tensors plus a manifest under a directory.

    Each tensor file is little-endian: magic ``RMT1``, u32 ndim, u32 dims,
    then the raw payload in the dtype recorded by the manifest.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        fname = f"{name}.rmt"
        with open(root / fname, "wb") as fh:
            fh.write(_TENSOR_MAGIC)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "file": fname})
    manifest = {"format": "radiomotion-checkpoint-v1",
                "meta": meta or {}, "tensors": entries}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(path) -> tuple[dict, dict]:
    root = Path(path)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "radiomotion-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format in {root}")
    tensors = {}
    for entry in manifest["tensors"]:
        with open(root / entry["file"], "rb") as fh:
            if fh.read(4) != _TENSOR_MAGIC:
                raise ValueError(f"bad magic in {entry['file']}")
            ndim, = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            arr = np.frombuffer(fh.read(), dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        if list(shape) != entry["shape"]:
            raise ValueError(f"shape mismatch for {entry['name']}")
        tensors[entry["name"]] = arr.reshape(shape).astype(entry["dtype"])
    return tensors, manifest.get("meta", {})
