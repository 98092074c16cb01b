"""Standard layers: convolution, nearest-neighbour resize, dense, batch norm.

All image ops take NHWC tensors. Convolution weights are laid out
``(K, K, C_in, C_out)`` and applied as cross-correlation with zero padding.
"""
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .exceptions import ContractError, DimensionError
from .tensor import DTYPE, Parameter, Tensor, init_truncated_normal, leaky_relu, record, relu, tanh

__all__ = [
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Module",
    "batch_norm",
    "conv2d",
    "conv_output_size",
    "dense",
    "depthwise_conv2d",
    "frozen",
    "leaky_relu",
    "relu",
    "resize_nn_2x",
    "tanh",
]


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _resolve_padding(k, padding):
    if padding == "same":
        if k % 2 == 0:
            raise ContractError(f"'same' padding needs an odd kernel size, got {k}")
        return (k - 1) // 2
    return int(padding)


def pad_hw(x, top, bottom, left, right):
    """Zero-pad the two spatial axes of an NHWC array (np.pad without its overhead)."""
    if not (top or bottom or left or right):
        return np.ascontiguousarray(x)
    n, h, w, c = x.shape
    out = np.zeros((n, h + top + bottom, w + left + right, c), dtype=x.dtype)
    out[:, top : top + h, left : left + w] = x
    return out


def channel_sum(a):
    """Sum over every axis but the last.

    Done as a ones-vector product: for few channels this is an order of
    magnitude faster than ``ndarray.sum(axis=...)`` and accumulates in blocks.
    """
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], a2.dtype) @ a2


def im2col(x, k, stride, pad):
    """Gather KxK patches: (N,H,W,C) -> (N,OH,OW,K,K,C), zero padded."""
    n, h, w, c = x.shape
    oh, ow = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if oh < 1 or ow < 1:
        raise DimensionError(f"kernel {k} with padding {pad} does not fit input {x.shape}")
    xp = pad_hw(x, pad, pad, pad, pad)
    sn, sh, sw, sc = xp.strides
    # one strided view, one copy: each (K, C) row of a patch is contiguous in xp
    view = as_strided(xp, (n, oh, ow, k, k, c), (sn, sh * stride, sw * stride, sh, sw, sc), writeable=False)
    return np.ascontiguousarray(view)


def col2im(cols, x_shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patches back onto the input grid."""
    n, h, w, c = x_shape
    oh, ow = cols.shape[1], cols.shape[2]
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            xp[:, di : di + stride * (oh - 1) + 1 : stride, dj : dj + stride * (ow - 1) + 1 : stride, :] += cols[:, :, :, di, dj, :]
    return xp[:, pad : pad + h, pad : pad + w, :] if pad else xp


def _conv_input_grad(g, weight, x_shape, pad):
    """Input gradient of a stride-1 conv as a full correlation with the flipped kernel."""
    k, _, c_in, c_out = weight.shape
    n, h, w, _ = x_shape
    lo = k - 1 - pad
    hi_h = h - g.shape[1] + pad
    hi_w = w - g.shape[2] + pad
    cols = im2col(pad_hw(g, lo, hi_h, lo, hi_w), k, 1, 0)
    flipped = weight[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c_in)
    return (cols.reshape(-1, k * k * c_out) @ flipped).reshape(n, h, w, c_in)


def _phase(r, pad, stride, size):
    """First input index of residue class ``r`` and the output index it aligns with."""
    start = (r - pad) % stride
    return start, (start + pad - r) // stride, len(range(start, size, stride))


def _strided_input_grad(g, weight, x_shape, stride, pad):
    """Input gradient of a strided conv, one stride-1 correlation per output phase.

    For input rows with ``(y + pad) % stride == r`` only the taps
    ``di = stride * a + r`` contribute, so each of the stride**2 phases is a
    (K/stride)-window correlation of ``g`` with a flipped sub-kernel.
    Requires ``K % stride == 0``.
    """
    k, _, c_in, c_out = weight.shape
    n, h, w, _ = x_shape
    oh, ow = g.shape[1], g.shape[2]
    ka = k // stride
    gx = np.empty(x_shape, dtype=g.dtype)
    for r in range(stride):
        y0, my, ny = _phase(r, pad, stride, h)
        for q in range(stride):
            x0, mx, nx = _phase(q, pad, stride, w)
            top, left = my - ka + 1, mx - ka + 1
            pt, pl = max(0, -top), max(0, -left)
            gp = pad_hw(g, pt, max(0, my + ny - oh), pl, max(0, mx + nx - ow))
            window = gp[:, top + pt : my + ny + pt, left + pl : mx + nx + pl]
            patches = im2col(window, ka, 1, 0).reshape(-1, ka * ka * c_out)
            sub = weight[r::stride, q::stride][::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c_in)
            gx[:, y0::stride, x0::stride] = (patches @ sub).reshape(n, ny, nx, c_in)
    return gx


def conv2d(x, weight, bias=None, stride=1, padding="same"):
    """2-D cross-correlation, NHWC input and (K, K, C_in, C_out) weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects NHWC input and KKIO weight, got {x.shape} and {weight.shape}")
    k, k2, c_in, c_out = weight.shape
    if k != k2:
        raise DimensionError(f"conv2d: square kernels only, got {weight.shape}")
    if x.shape[-1] != c_in:
        raise DimensionError(f"conv2d: input has {x.shape[-1]} channels, weight {weight.shape} expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
    pad = _resolve_padding(k, padding)
    n = x.shape[0]

    if k == 1 and stride == 1 and pad == 0:
        cols = x.data.reshape(-1, c_in)
        oh, ow = x.shape[1], x.shape[2]
    else:
        cols6 = im2col(x.data, k, stride, pad)
        oh, ow = cols6.shape[1], cols6.shape[2]
        cols = cols6.reshape(-1, k * k * c_in)
    w2 = weight.data.reshape(-1, c_out)
    y = cols @ w2
    if bias is not None:
        y += bias.data
    y = y.reshape(n, oh, ow, c_out)

    def back(g):
        g2 = g.reshape(-1, c_out)
        gw = (cols.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        gb = channel_sum(g2) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            if k == 1 and stride == 1 and pad == 0:
                gx = (g2 @ w2.T).reshape(x.shape)
            elif stride == 1:
                gx = _conv_input_grad(g, weight.data, x.shape, pad)
            elif k % stride == 0:
                gx = _strided_input_grad(g, weight.data, x.shape, stride, pad)
            else:
                gx = col2im((g2 @ w2.T).reshape(n, oh, ow, k, k, c_in), x.shape, k, stride, pad)
        return (gx, gw, gb)

    parents = (x, weight, bias if bias is not None else Tensor(0.0))
    return record(y, parents, back)


def depthwise_conv2d(x, weight):
    """Per-channel KxK correlation with depth multiplier 1; weight (K, K, C)."""
    k = weight.shape[0]
    if weight.ndim != 3 or weight.shape[1] != k or weight.shape[2] != x.shape[-1]:
        raise DimensionError(f"depthwise_conv2d: weight {weight.shape} does not match input {x.shape}")
    pad = _resolve_padding(k, "same")
    n, h, w, c = x.shape
    xp = pad_hw(x.data, pad, pad, pad, pad)
    y = np.zeros(x.shape, dtype=x.data.dtype)
    for di in range(k):
        for dj in range(k):
            y += xp[:, di : di + h, dj : dj + w, :] * weight.data[di, dj]

    def back(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di : di + h, dj : dj + w, :] += g * weight.data[di, dj]
            gx = gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp
        if weight.requires_grad:
            gw = np.empty(weight.shape, dtype=g.dtype)
            for di in range(k):
                for dj in range(k):
                    gw[di, dj] = np.einsum("nhwc,nhwc->c", xp[:, di : di + h, dj : dj + w, :], g)
        return (gx, gw)

    return record(y, (x, weight), back)


def extract_patches(x, k):
    """Zero-padded KxK neighbourhoods as channels: (N,H,W,C) -> (N,H,W,K*K*C)."""
    pad = _resolve_padding(k, "same")
    n, h, w, c = x.shape
    y = im2col(x.data, k, 1, pad).reshape(n, h, w, k * k * c)
    return record(y, (x,), lambda g: (col2im(g.reshape(n, h, w, k, k, c), x.shape, k, 1, pad),))


def resize_nn_2x(x):
    """Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block."""
    n, h, w, c = x.shape
    y = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
    return record(y, (x,), lambda g: (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),))


def dense(x, weight, bias=None):
    """Affine map on the flattened non-batch axes; weight is (in, out)."""
    n = x.shape[0]
    x2 = x.data.reshape(n, -1)
    if x2.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense: flattened input {x2.shape} does not match weight {weight.shape}")
    y = x2 @ weight.data
    if bias is not None:
        y += bias.data

    def back(g):
        gx = (g @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g if weight.requires_grad else None
        gb = channel_sum(g) if bias is not None else None
        return (gx, gw, gb)

    return record(y, (x, weight, bias if bias is not None else Tensor(0.0)), back)


def batch_norm(x, gamma, beta, running_mean, running_var, training=True, momentum=0.9, eps=1e-5):
    """Per-channel normalisation over every axis but the last.

    In training mode the batch statistics are used and the running arrays
    are updated in place as ``r = momentum * r + (1 - momentum) * batch``,
    with the unbiased variance feeding ``running_var``.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = tuple(range(x.ndim - 1))
    m = x.size // c

    if training:
        if m < 2:
            raise ContractError("batch_norm in train mode needs at least 2 values per channel")
        mu = channel_sum(x.data) / m
        centred = x.data - mu
        var = channel_sum(centred * centred) / m
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var * m / (m - 1)
    else:
        mu, var = running_mean, running_var
        centred = x.data - mu.astype(x.data.dtype)
    dt = x.data.dtype
    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = centred * inv
    y = xhat * gamma.data + beta.data

    def back(g):
        gb = channel_sum(g)
        gg = channel_sum(g * xhat)
        scale = gamma.data * inv
        if training:
            # sums of g*gamma and g*gamma*xhat are gamma*gb and gamma*gg
            gx = xhat * (gg / m)
            gx += gb / m
            np.subtract(g, gx, out=gx)
            gx *= scale
        else:
            gx = g * scale
        return (gx, gg, gb)

    return record(y, (x, gamma, beta), back)


# --------------------------------------------------------------------------
# Modules
# --------------------------------------------------------------------------


class Module:
    """Minimal container: Parameters and ndarray attributes (buffers) are state.

    Child modules may be held directly or inside lists; names are dotted
    attribute paths in definition order.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (own.keys() | buffers.keys()) - state.keys()
        if missing:
            raise DimensionError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} vs model shape {p.shape}")
            p.data = arr.copy()
        for name, buf in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} vs model shape {buf.shape}")
            buf[...] = arr


@contextmanager
def frozen(module):
    """Temporarily stop gradient recording into ``module``'s parameters."""
    params = module.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def init_weight(rng, shape, stddev=0.02):
    """Truncated-normal weight, or zeros when no rng is given."""
    if rng is None:
        return Parameter(np.zeros(shape, dtype=DTYPE))
    return Parameter(init_truncated_normal(rng, shape, stddev).data)


def zeros(shape):
    return Parameter(np.zeros(shape, dtype=DTYPE))


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, padding="same", rng=None):
        self.weight = init_weight(rng, (k, k, c_in, c_out))
        self.bias = zeros((c_out,))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Dense(Module):
    def __init__(self, n_in, n_out, rng=None):
        self.weight = init_weight(rng, (n_in, n_out))
        self.bias = zeros((n_out,))

    def forward(self, x):
        return dense(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=DTYPE))
        self.beta = zeros((channels,))
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )
