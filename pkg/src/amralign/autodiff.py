"""Small reverse-mode autodiff over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``backward`` walks
the recorded graph in reverse topological order. Only leaves created with
``requires_grad=True`` (parameters) keep their gradients between calls.
"""

from __future__ import annotations

import contextlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_DROPOUT_ENABLED = True


@contextlib.contextmanager
def no_dropout():
    """Disable dropout globally (deterministic mode)."""
    global _DROPOUT_ENABLED
    prev = _DROPOUT_ENABLED
    _DROPOUT_ENABLED = False
    try:
        yield
    finally:
        _DROPOUT_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data)
    return Tensor(data, True, parents, backward)


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise / linear ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: _accum(x, g * (1.0 - out * out)))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _make(out, (x,), lambda g: _accum(x, g * out * (1.0 - out)))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: _accum(x, g * out))


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(x.data.sum(axis=axis), (x,), bw)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(x.shape)))


def take(x, idx) -> Tensor:
    """``x[idx]`` with a scatter-add backward (repeated indices accumulate)."""
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accum(x, full)

    return _make(x.data[idx], (x,), bw)


def embedding(table, indices) -> Tensor:
    """Row lookup ``table[indices]``."""
    return take(table, np.asarray(indices, dtype=np.int64))


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        for k, t in enumerate(ts):
            _accum(t, np.take(g, k, axis=axis))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, bw)


# --- normalizers -------------------------------------------------------------

def _lse(data, axis):
    m = np.max(data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(data - m), axis=axis, keepdims=True))


def logsumexp(x, axis=-1) -> Tensor:
    """Overflow-safe ``log(sum(exp(x)))`` along ``axis``."""
    x = as_tensor(x)
    lse = _lse(x.data, axis)
    soft = np.exp(x.data - lse)

    def bw(g):
        _accum(x, np.expand_dims(g, axis) * soft)

    return _make(np.squeeze(lse, axis=axis), (x,), bw)


def log_softmax(x, axis=-1, mask=None) -> Tensor:
    """Log-softmax; entries where ``mask`` is False come out as exactly -inf."""
    x = as_tensor(x)
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        data = np.where(mask, data, -np.inf)
    out = data - _lse(data, axis)
    soft = np.exp(out)

    def bw(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bw)


def dropout(x, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval needs no rescale."""
    x = as_tensor(x)
    if not train or p <= 0.0 or not _DROPOUT_ENABLED or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: _accum(x, g * keep))


# --- backward ----------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into every reachable leaf's ``.grad``."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("NaN or inf loss encountered")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    leaves = []
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            leaves.append(node)
            continue
        if node.grad is not None:
            node._backward(node.grad)
            node.grad = None
    for leaf in leaves:
        if leaf.grad is not None and not np.isfinite(leaf.grad).all():
            raise FloatingPointError("NaN encountered in gradient")


# --- parameters ----------------------------------------------------------------

class ParamStore:
    """Named parameters with gradient buffers and Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise ValueError(f"parameter {name!r} has non-finite values")
        p = Tensor(value, requires_grad=True)
        self.params[name] = p
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return p

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params.items()}

    def num_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def save(self, path, metadata: dict | None = None) -> None:
        save_tensors(path, {n: p.data for n, p in self.params.items()}, metadata)

    def load_values(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in tensors:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            if tensors[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {tensors[name].shape} vs {p.data.shape}")
            p.data[...] = tensors[name]


def adam_step(store: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Adam with bias correction; parameters without a gradient see g = 0."""
    b1, b2 = betas
    store.t += 1
    c1 = 1.0 - b1 ** store.t
    c2 = 1.0 - b2 ** store.t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else 0.0
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def init_uniform(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


# --- gradient check ------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst: tuple[str, tuple] | None
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} over {self.n_checked} coordinates (worst {self.worst})"


def grad_check(
    f,
    params: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    names=None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare backward gradients of ``f()`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Central differences carry a round-off error of roughly
    ``eps * |f| / h`` (about 1e-10 for losses near 10 at h = 1e-5), so
    gradients far below ``floor`` cannot be resolved in relative terms and
    are effectively compared in absolute terms instead.
    Dropout is disabled for every evaluation. ``max_coords`` samples that
    many coordinates per parameter (all when None).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = rng or np.random.default_rng(0)
    names = list(names) if names is not None else list(params)
    with no_dropout():
        params.zero_grad()
        loss = f()
        backward(loss)
        analytic = params.grads()
        worst_err, worst_at, count = 0.0, None, 0
        per_param = {}
        for name in names:
            p = params[name]
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            a_flat = analytic[name].reshape(-1)
            param_worst = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                fp = f().item()
                flat[c] = orig - h
                fm = f().item()
                flat[c] = orig
                num = (fp - fm) / (2.0 * h)
                a = a_flat[c]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                count += 1
                param_worst = max(param_worst, err)
                if err > worst_err:
                    worst_err, worst_at = err, (name, np.unravel_index(c, p.shape))
            per_param[name] = param_worst
        params.zero_grad()
    return GradCheckReport(worst_err, worst_err < tol, worst_at, count, per_param)


# --- checkpoint container --------------------------------------------------------
#
# little-endian layout:
#   b"AMRT" | u32 version=1 | u64 meta_len | meta (UTF-8 JSON) | u32 count
#   count x ( u32 name_len | name (UTF-8) | u32 ndim | ndim x u64 dims | f64 payload )

_MAGIC = b"AMRT"


def save_tensors(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", 1, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor checkpoint")
    pos = 4
    version, meta_len = struct.unpack_from("<IQ", data, pos)
    if version != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 12
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        tensors[name] = arr
    return tensors, meta


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: _accum(x, np.swapaxes(g, -1, -2)))
