"""Minimal reverse-mode autodiff tensor on top of numpy.

The graph is built from backward closures (one per op) and walked in reverse
topological order, micrograd style. Only float32 ("single", training) and
float64 ("double", testing) payloads are supported; every op preserves the
dtype of its inputs.

Structural ops (reshape/transpose/concat/slicing/matmul/...) live here; the
neural-network primitives with fused backward rules live in ``ops``.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

_GRAD_ENABLED = True

SUPPORTED_DTYPES = (np.float32, np.float64)


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph construction (evaluation / data paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """An n-dimensional array with a value role and an optional gradient role."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- convenience ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req}{nm})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- autodiff core ----------------------------------------------------
    def backward(self, seed: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this node.

        ``seed`` defaults to ones; it must be supplied for non-scalar outputs
        unless a ones seed is intended.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() on non-scalar output of shape {self.shape} needs a seed")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, *axes)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Attach a backward closure if the graph is live and any parent needs grad."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- structural ops ---------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):  # keep python scalars weakly typed
        shift = float(b)

        def _bw_s(g):
            a.accumulate_grad(g)

        return make_node(a.data + shift, (a,), _bw_s)
    b = as_tensor(b)
    out_data = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(unbroadcast(g, b.shape))

    return make_node(out_data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        scale = float(b)

        def _bw_s(g):
            a.accumulate_grad(g * scale)

        return make_node(a.data * scale, (a,), _bw_s)
    b = as_tensor(b)
    out_data = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(unbroadcast(g * a.data, b.shape))

    return make_node(out_data, (a, b), _bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a.accumulate_grad(unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate_grad(unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_node(out_data, (a, b), _bw)


def reshape(x, *shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out_data = x.data.reshape(shape)

    def _bw(g):
        x.accumulate_grad(g.reshape(x.shape))

    return make_node(out_data, (x,), _bw)


def transpose(x, *axes) -> Tensor:
    x = as_tensor(x)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inverse = np.argsort(axes)

    def _bw(g):
        x.accumulate_grad(g.transpose(inverse))

    return make_node(x.data.transpose(axes), (x,), _bw)


def take(x, index) -> Tensor:
    """Basic slicing; backward scatters into a zero buffer.

    Only basic (non-fancy) indices are supported, so scatter positions never
    alias and a plain ``+=`` is exact.
    """
    x = as_tensor(x)
    out_data = x.data[index]

    def _bw(g):
        full = np.zeros_like(x.data)
        full[index] += g
        x.accumulate_grad(full)

    return make_node(out_data, (x,), _bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    return make_node(out_data, tuple(tensors), _bw)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = np.broadcast_to(x.data, shape).copy()

    def _bw(g):
        x.accumulate_grad(unbroadcast(g, x.shape))

    return make_node(out_data, (x,), _bw)


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        x.accumulate_grad(np.broadcast_to(g, x.shape))

    return make_node(out_data, (x,), _bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out_data = x.data.mean(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        x.accumulate_grad(np.broadcast_to(g, x.shape) / count)

    return make_node(out_data, (x,), _bw)
