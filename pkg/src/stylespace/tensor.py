"""Dense float32 tensors with tape-based reverse-mode differentiation.

The graph is rebuilt on every forward pass: each operation returns a new
Tensor holding references to its inputs and a closure that maps the output
gradient to per-input gradients.  ``backward`` walks the tape in reverse
topological order and accumulates gradients on every tensor that requires
them.  Storage and compute are float32; reductions accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "parameter",
    "matmul",
    "conv2d",
    "conv2d_output_shape",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "add",
    "sub",
    "mul",
    "square",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "upsample2x",
    "AdamState",
    "adam_step",
    "zero_grad",
]


class Tensor:
    """A float32 array plus the bookkeeping needed for backpropagation.

    Leaf tensors are created directly; interior nodes are created by the
    operations below.  ``grad`` is populated by ``backward`` and accumulates
    across calls until reset (see ``zero_grad``).
    """

    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._inputs: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's data, cut off from the tape."""
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions carry the contracts.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _make_node(data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data.astype(np.float32, copy=False)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    if out.requires_grad:
        out._inputs = inputs
        out._grad_fn = grad_fn
    else:
        out._inputs = ()
        out._grad_fn = None
    return out


def _check_broadcast(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> None:
    # Trailing-compatible only: right-aligned dims must match or be 1.
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"shapes {a_shape} and {b_shape} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing the broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# elementwise / broadcast ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_node(data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make_node(data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    data = a.data * b.data

    def grad_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make_node(data, (a, b), grad_fn)


def square(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data * a.data

    def grad_fn(g):
        return (g * (2.0 * a.data),)

    return _make_node(data, (a,), grad_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def grad_fn(g):
        return (g * (a.data > 0.0),)

    return _make_node(data, (a,), grad_fn)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # Evaluate each branch only where it is stable to avoid exp overflow.
    pos = x >= 0
    z = np.where(pos, -x, x)
    ez = np.exp(z)
    data = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(np.float32)

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return _make_node(data, (a,), grad_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def grad_fn(g):
        return (g * data,)

    return _make_node(data, (a,), grad_fn)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    data = np.log(a.data)

    def grad_fn(g):
        return (g / a.data,)

    return _make_node(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    """Sum reduction; accumulates in float64, stores float32."""
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    data = a.data.sum(axis=axes or None, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    if a.data.ndim == 0:
        data = a.data.copy()

    def grad_fn(g):
        gx = g
        if not keepdims and a.data.ndim:
            gx = np.expand_dims(gx, axes)
        return (np.broadcast_to(gx, a.shape).astype(np.float32),)

    return _make_node(np.asarray(data), (a,), grad_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    """Mean reduction; accumulates in float64, stores float32."""
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.data.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    data = a.data.mean(axis=axes or None, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    if a.data.ndim == 0:
        data = a.data.copy()

    def grad_fn(g):
        gx = g / count
        if not keepdims and a.data.ndim:
            gx = np.expand_dims(gx, axes)
        return (np.broadcast_to(gx, a.shape).astype(np.float32),)

    return _make_node(np.asarray(data), (a,), grad_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}: {e}") from None

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _make_node(data, (a,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _make_node(data, tuple(ts), grad_fn)


def upsample2x(a) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an NCHW tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 4:
        raise DimensionError(f"upsample2x expects NCHW input, got shape {a.shape}")
    data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def grad_fn(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _make_node(data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make_node(data, (a, b), grad_fn)


def conv2d_output_shape(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = conv2d_output_shape(h, w, kh, kw, stride, pad)
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride)
    )
    return windows.reshape(n, c * kh * kw, ho * wo), ho, wo


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with FCkk kernels.

    Output spatial dims follow floor((H + 2*pad - kh)/stride) + 1.  Gradients
    flow to whichever of input/kernel requires them.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and FCkk kernel, got {x.shape}, {w.shape}")
    n, c, h, wi = x.shape
    f, ck, kh, kw = w.shape
    if ck != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, kernel {ck}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    if pad < 0:
        raise ContractError(f"conv2d pad must be >= 0, got {pad}")
    if kh > h + 2 * pad or kw > wi + 2 * pad:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wi + 2 * pad}"
        )
    ho, wo = conv2d_output_shape(h, wi, kh, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d output dimension non-positive: {ho}x{wo}")

    cols, _, _ = _im2col(x.data, kh, kw, stride, pad)
    w_mat = w.data.reshape(f, c * kh * kw)
    out = np.matmul(w_mat[None], cols).reshape(n, f, ho, wo)
    # Patch matrix is only retained when the kernel needs a gradient.
    saved_cols = cols if w.requires_grad else None

    def grad_fn(g):
        g_mat = g.reshape(n, f, ho * wo)
        gw = None
        if w.requires_grad:
            gw = np.matmul(g_mat, saved_cols.transpose(0, 2, 1)).sum(axis=0)
            gw = gw.reshape(f, c, kh, kw)
        gx = None
        if x.requires_grad:
            if stride == 1:
                # input grad as a full correlation of g with the flipped
                # kernel: an im2col+GEMM over the (smaller) output grad
                # beats a 9-pass strided scatter on large stride-1 convs
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gcols, _, _ = _im2col(gp, kh, kw, 1, 0)
                w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, f * kh * kw)
                gxp = np.matmul(w_flip[None], gcols).reshape(n, c, h + 2 * pad, wi + 2 * pad)
            else:
                v = np.matmul(w_mat.T[None], g_mat).reshape(n, c, kh, kw, ho, wo)
                hp, wp = h + 2 * pad, wi + 2 * pad
                gxp = np.zeros((n, c, hp, wp), dtype=np.float32)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += v[
                            :, :, i, j
                        ]
            gx = gxp[:, :, pad : pad + h, pad : pad + wi] if pad else gxp
        return gx, gw

    return _make_node(out, (x, w), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor that requires one.

    The loss must be scalar.  Gradients accumulate additively, both across
    fan-out within the graph and across repeated ``backward`` calls.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._grad_fn is None:
            continue
        input_grads = node._grad_fn(g)
        for parent, pg in zip(node._inputs, input_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter Adam moment buffers plus the shared step counter."""

    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params,
    grads,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ContractError(f"betas must lie in [0, 1): got {beta1}, {beta2}")
    if eps <= 0.0:
        raise ContractError(f"eps must be positive, got {eps}")
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError(
            f"param/grad/state counts differ: {len(params)}, {len(grads)}, "
            f"{len(state.first_moment)}"
        )
    for p, g in zip(params, grads):
        if p.data.shape != g.shape:
            raise DimensionError(f"grad shape {g.shape} does not match param {p.data.shape}")

    state.step_count += 1
    t = state.step_count
    b1c = 1.0 - beta1**t
    b2c = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g32 = g.astype(np.float32, copy=False)
        m *= beta1
        m += (1.0 - beta1) * g32
        v *= beta2
        v += (1.0 - beta2) * (g32 * g32)
        m_hat = m / b1c
        v_hat = v / b2c
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    return state
