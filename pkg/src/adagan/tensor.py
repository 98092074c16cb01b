"""Dense float32 tensors, a deterministic RNG and a reverse-mode autodiff tape.

Feature maps use the NHWC layout (batch, height, width, channels). Every
tensor stores a C-contiguous ``float32`` buffer, so element ``(i0, ..., ik)``
lives at the usual row-major offset.

Gradients are recorded on a :class:`Tape`. While a tape is active, every op
whose inputs require gradients appends its output node to the tape, so the
tape is always in topological order. Outside a tape, ops compute values only.

    >>> w = Parameter([[1.0, 2.0]])
    >>> with Tape() as tape:
    ...     loss = sum(matmul(w, Tensor([[3.0], [4.0]])))
    >>> tape.backward(loss)
    >>> w.grad.tolist()
    [[3.0, 4.0]]

BLAS-backed kernels (matmul, convolutions) are bit-reproducible for a fixed
number of BLAS threads; changing the thread count may change the last bits.
"""
import math
from contextlib import contextmanager

import numpy as np

from .exceptions import ContractError, DimensionError

DTYPE = np.float32

_TAPES = []
_PRECISION = [DTYPE]


def compute_dtype():
    """Dtype new tensors are stored in; float32 unless inside :func:`precision`."""
    return _PRECISION[-1]


@contextmanager
def precision(dtype):
    """Run ops in another float dtype, e.g. float64 reference evaluations."""
    _PRECISION.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _PRECISION.pop()


def _active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """Immutable dense array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = _contiguous(data)
        if arr.size == 0:
            raise DimensionError(f"tensor extents must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self.data.item()

    def numpy(self):
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"{type(self).__name__}(shape={self.shape}{tag}{flag})"

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, index):
        return take(self, index)

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
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return sum(self)

    def mean(self):
        return mean(self)


class Parameter(Tensor):
    """A learnable leaf tensor; always requires gradients."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _contiguous(data):
    arr = np.asarray(data, dtype=_PRECISION[-1])
    return arr if arr.flags.c_contiguous else arr.copy()


def _wrap(arr):
    out = Tensor.__new__(Tensor)
    out.data = _contiguous(arr)
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._parents = ()
    out._backward = None
    return out


def record(data, parents, backward):
    """Create the output node of an op, recording it when a tape is active.

    ``backward`` maps the output gradient to a tuple of gradients, one per
    parent (``None`` for parents that need none).
    """
    out = _wrap(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # fixed at record time, so freezing a module only affects ops run while frozen
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward
        tape._nodes.append(out)
    return out


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward.

    Use as a context manager; tapes nest, and only the innermost one records.
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self):
        return tuple(self._nodes)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor recorded on this tape")
        try:
            stop = next(i for i in range(len(self._nodes) - 1, -1, -1) if self._nodes[i] is loss)
        except StopIteration:
            raise ContractError("loss was not recorded on this tape") from None

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes[: stop + 1]):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or parent is None:
                    continue
                if parent._backward is None:
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=parent.data.dtype).reshape(parent.shape)
                    else:
                        parent.grad = parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg

    def gradient(self, loss, sources):
        """Return gradients of ``loss`` w.r.t. ``sources`` (zeros when unreachable)."""
        for s in sources:
            s.grad = None
        self.backward(loss)
        return [s.grad if s.grad is not None else np.zeros_like(s.data) for s in sources]


def backward(tape, loss):
    """Functional form of :meth:`Tape.backward`."""
    tape.backward(loss)


# --------------------------------------------------------------------------
# Random numbers
# --------------------------------------------------------------------------


class Rng:
    """Seeded random stream on the PCG64 bit generator.

    PCG64 is a fixed, documented algorithm, so a seed yields the same uniform
    stream on every platform. Gaussian samples come from the Box-Muller
    transform applied to that stream rather than numpy's own normal sampler.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def spawn(self, key):
        """Independent child stream identified by a non-negative integer key."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def uniform(self, shape):
        return self._gen.random(shape)

    def normal(self, shape):
        shape = tuple(shape)
        n = math.prod(shape)
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


def sample_gaussian(rng, shape):
    """I.i.d. standard normal tensor."""
    return _wrap(rng.normal(shape))


def init_truncated_normal(rng, shape, stddev=0.02, bound=2.0):
    """Normal(0, stddev) samples, redrawn until every |x| <= bound * stddev."""
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    shape = tuple(shape)
    x = rng.normal(shape).reshape(-1)
    bad = np.abs(x) > bound
    while bad.any():
        x[bad] = rng.normal((int(bad.sum()),))
        bad = np.abs(x) > bound
    return _wrap((x * stddev).reshape(shape))


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------


def _operands(a, b, opname):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim and b.ndim:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not match")
    return a, b


def _unbroadcast(g, shape):
    return g if g.shape == shape else np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b):
    a, b = _operands(a, b, "add")
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _operands(a, b, "sub")
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _operands(a, b, "mul")
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x, c):
    """Multiply by a constant (no gradient flows into ``c``)."""
    c = x.data.dtype.type(c)
    return record(x.data * c, (x,), lambda g: (g * c,))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x):
    y = np.maximum(x.data, x.data.dtype.type(0))
    return record(y, (x,), lambda g: (g * (y > 0).astype(g.dtype),))


def leaky_relu(x, slope=0.1):
    """max(x, slope * x) for slope in [0, 1]; derivative at 0 is ``slope``."""
    s = x.data.dtype.type(slope)
    y = np.maximum(x.data, x.data * s)

    def back(g):
        # float multiplier 1 or s: much faster than a masked copy
        d = (x.data > 0).astype(g.dtype)
        d *= 1 - s
        d += s
        d *= g
        return (d,)

    return record(y, (x,), back)


def tanh(x):
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x):
    y = _sigmoid(x.data)
    return record(y, (x,), lambda g: (g * y * (1 - y),))


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)


def softplus(x):
    """log(1 + exp(x)) without overflow for large |x|."""
    v = x.data
    y = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
    return record(y, (x,), lambda g: (g * _sigmoid(v),))


def sum(x):
    return record(x.data.sum(dtype=np.float64), (x,), lambda g: (np.broadcast_to(g, x.shape),))


def mean(x):
    n = x.size
    return record(
        x.data.sum(dtype=np.float64) / n,
        (x,),
        lambda g: (np.broadcast_to(g / g.dtype.type(n), x.shape),),
    )


def reshape(x, shape):
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    return record(y, (x,), lambda g: (g.reshape(x.shape),))


def take(x, index):
    """Basic-index slice ``x[index]`` with a scatter-back gradient."""
    y = x.data[index]

    def back(g):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return record(y, (x,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op, *args):
    """Dispatch a pointwise op by name: relu, tanh, sigmoid, softplus, add, sub, mul, scale."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](as_tensor(x))
    if op in _BINARY:
        return _BINARY[op](*args)
    if op == "scale":
        x, c = args
        return scale(as_tensor(x), c)
    raise ValueError(f"unknown elementwise op {op!r}")
