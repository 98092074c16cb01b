"""Adaptive convolution: per-pixel filters and biases regressed from the input.

An AdaConvBlock replaces a ``K_filter x K_filter`` convolution with ``C_in``
inputs and ``C_out`` outputs. Two ordinary convolutions with window
``K_adaptive`` look at the neighbourhood of every pixel and emit

* a weight vector of ``C_adaptive = K_filter**2 * C_in * C_out`` entries
  (ReLU-activated), and
* a bias vector of ``C_out`` entries (linear),

which are then applied at that pixel only by :func:`local_conv`. The
separable variant computes the weight regression as a depthwise ``K_adaptive``
convolution followed by a 1x1 pointwise convolution.

The weight vector at a pixel is flattened so that channel
``q = ((di * K_filter + dj) * C_in + c_in) * C_out + c_out`` holds the tap at
offset ``(di, dj)`` for input channel ``c_in`` and output channel ``c_out``,
i.e. a row-major ``(K_filter, K_filter, C_in, C_out)`` kernel, the same
layout :func:`adagan.nn.conv2d` uses for shared kernels.
"""
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import CapacityError, ConfigError, DimensionError
from .nn import Module, col2im, conv2d, depthwise_conv2d, extract_patches, im2col, init_weight, zeros
from .tensor import DTYPE, record, relu, reshape

DEFAULT_MAX_BYTES = 2 * 1024**3
VARIANTS = ("naive", "separable")


@dataclass(frozen=True)
class AdaConvBlockSpec:
    k_filter: int
    k_adaptive: int
    c_in: int
    c_out: int
    variant: str = "separable"
    c_depthwise: int = 1

    def __post_init__(self):
        for name in ("k_filter", "k_adaptive"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigError(f"channel counts must be positive, got c_in={self.c_in}, c_out={self.c_out}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "separable" and self.c_depthwise != 1:
            raise ConfigError(f"separable blocks use depth multiplier 1, got {self.c_depthwise}")

    @property
    def c_adaptive(self):
        return self.k_filter * self.k_filter * self.c_in * self.c_out

    def param_shapes(self):
        ka, c_in = self.k_adaptive, self.c_in
        shapes = {}
        if self.variant == "naive":
            shapes["w_ww"] = (ka, ka, c_in, self.c_adaptive)
        else:
            shapes["w_ww_depthwise"] = (ka, ka, c_in)
            shapes["w_ww_pointwise"] = (1, 1, c_in, self.c_adaptive)
        shapes["b_wb"] = (self.c_adaptive,)
        shapes["w_bw"] = (ka, ka, c_in, self.c_out)
        shapes["b_bb"] = (self.c_out,)
        return shapes


@dataclass
class AdaConvBlockParams:
    """Learnable tensors of one block; unused entries stay ``None``."""

    b_wb: object
    w_bw: object
    b_bb: object
    w_ww: object = None
    w_ww_depthwise: object = None
    w_ww_pointwise: object = None

    def tensors(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


def _check_input(x, spec):
    if x.ndim != 4 or x.shape[-1] != spec.c_in:
        raise DimensionError(f"AdaConvBlock expects (N, H, W, {spec.c_in}) input, got {x.shape}")


def _check_budget(n_values, what, max_bytes):
    nbytes = int(n_values) * np.dtype(DTYPE).itemsize
    if nbytes > max_bytes:
        raise CapacityError(f"{what} would need {nbytes} bytes, over the budget of {max_bytes} bytes")


def regress_weights(x, params, spec, max_bytes=DEFAULT_MAX_BYTES):
    """Per-pixel flattened filters, ReLU(conv(x) + b_wb): (N, H, W, C_adaptive)."""
    _check_input(x, spec)
    n, h, w, _ = x.shape
    _check_budget(n * h * w * spec.c_adaptive, "the regressed weight field", max_bytes)
    if spec.variant == "naive":
        pre = conv2d(x, params.w_ww, params.b_wb)
    else:
        pre = conv2d(depthwise_conv2d(x, params.w_ww_depthwise), params.w_ww_pointwise, params.b_wb)
    return relu(pre)


def regress_biases(x, params, spec):
    """Per-pixel biases, conv(x) + b_bb with no activation: (N, H, W, C_out)."""
    _check_input(x, spec)
    return conv2d(x, params.w_bw, params.b_bb)


def local_conv(x, w_adaptive, b_adaptive, k_filter):
    """Apply a distinct zero-padded K x K x C_in x C_out filter at every pixel."""
    n, h, w, c_in = x.shape
    c_out = b_adaptive.shape[-1]
    taps = k_filter * k_filter * c_in
    if w_adaptive.shape != (n, h, w, taps * c_out):
        raise DimensionError(
            f"local_conv: weight field {w_adaptive.shape} does not factor as "
            f"({n}, {h}, {w}, {k_filter}*{k_filter}*{c_in}*{c_out}) for input {x.shape}"
        )
    if b_adaptive.shape != (n, h, w, c_out):
        raise DimensionError(f"local_conv: bias field {b_adaptive.shape} does not match input {x.shape}")
    pad = (k_filter - 1) // 2
    cols = im2col(x.data, k_filter, 1, pad).reshape(-1, 1, taps)
    kernels = w_adaptive.data.reshape(-1, taps, c_out)
    y = np.matmul(cols, kernels).reshape(n, h, w, c_out) + b_adaptive.data

    def back(g):
        g3 = g.reshape(-1, 1, c_out)
        gx = gw = None
        if x.requires_grad:
            gcols = np.matmul(kernels, g3.transpose(0, 2, 1))
            gx = col2im(gcols.reshape(n, h, w, k_filter, k_filter, c_in), x.shape, k_filter, 1, pad)
        if w_adaptive.requires_grad:
            gw = np.matmul(cols.transpose(0, 2, 1), g3).reshape(w_adaptive.shape)
        return (gx, gw, g)

    return record(y, (x, w_adaptive, b_adaptive), back)


def _regressed_local_conv(x, feat, w_mat, b_wb, b_field, k_filter):
    """local_conv(x, ReLU(feat @ w_mat + b_wb), b_field) as a single op.

    Same maths as composing :func:`regress_weights` and :func:`local_conv`,
    but the (N, H, W, C_adaptive) weight field is written once, rectified in
    place, and its gradient is masked in place, which saves several passes
    over the largest array in the network.
    """
    n, h, w, c_in = x.shape
    c_out = b_field.shape[-1]
    taps = k_filter * k_filter * c_in
    pixels = n * h * w
    pad = (k_filter - 1) // 2
    # a ones column folds b_wb into the matmul, and its gradient into gw's
    feat2 = np.empty((pixels, feat.shape[-1] + 1), dtype=feat.data.dtype)
    feat2[:, :-1] = feat.data.reshape(pixels, -1)
    feat2[:, -1] = 1
    w_aug = np.concatenate([w_mat.data, b_wb.data[None]])
    field = feat2 @ w_aug
    np.maximum(field, 0, out=field)
    kernels = field.reshape(pixels, taps, c_out)
    cols = im2col(x.data, k_filter, 1, pad).reshape(pixels, 1, taps)
    y = np.matmul(cols, kernels).reshape(n, h, w, c_out) + b_field.data

    def back(g):
        g3 = g.reshape(pixels, 1, c_out)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(kernels, g3.transpose(0, 2, 1))
            gx = col2im(gcols.reshape(n, h, w, k_filter, k_filter, c_in), x.shape, k_filter, 1, pad)
        gfield = np.einsum("pt,pc->ptc", cols.reshape(pixels, taps), g.reshape(pixels, c_out))
        gfield *= kernels > 0
        gfield = gfield.reshape(pixels, -1)
        gfeat = (gfield @ w_mat.data.T).reshape(feat.shape) if feat.requires_grad else None
        gw = gb = None
        if w_mat.requires_grad or b_wb.requires_grad:
            # (A^T B) as (B^T A)^T: BLAS is much faster with the long axis leading here
            gw_aug = (gfield.T @ feat2).T
            gw, gb = gw_aug[:-1], gw_aug[-1]
        return (gx, gfeat, gw, gb, g)

    return record(y, (x, feat, w_mat, b_wb, b_field), back)


def adaconv_block(x, params, spec, max_bytes=DEFAULT_MAX_BYTES, fused=True):
    """Weight regression, bias regression and local convolution of one block.

    ``fused=False`` evaluates the three stages as separate ops; both routes
    compute the same function.
    """
    if not fused:
        w_adaptive = regress_weights(x, params, spec, max_bytes)
        b_adaptive = regress_biases(x, params, spec)
        return local_conv(x, w_adaptive, b_adaptive, spec.k_filter)
    _check_input(x, spec)
    n, h, w, _ = x.shape
    _check_budget(n * h * w * spec.c_adaptive, "the regressed weight field", max_bytes)
    if spec.variant == "naive":
        feat = extract_patches(x, spec.k_adaptive)
        w_mat = reshape(params.w_ww, (-1, spec.c_adaptive))
    else:
        feat = depthwise_conv2d(x, params.w_ww_depthwise)
        w_mat = reshape(params.w_ww_pointwise, (spec.c_in, spec.c_adaptive))
    b_field = regress_biases(x, params, spec)
    return _regressed_local_conv(x, feat, w_mat, params.b_wb, b_field, spec.k_filter)


class AdaConvBlock(Module):
    """Adaptive convolution layer holding its regression parameters.

    Weights are drawn from a truncated normal (stddev 0.02) when ``rng`` is
    given, otherwise zero-filled; biases always start at zero. With zero
    ``b_wb`` the initial per-pixel kernels are small and about half of them
    are clipped to zero by the ReLU.
    """

    def __init__(self, spec, rng=None, max_bytes=DEFAULT_MAX_BYTES):
        self.spec = spec
        self.max_bytes = max_bytes
        for name, shape in spec.param_shapes().items():
            _check_budget(np.prod(shape, dtype=np.int64), f"parameter {name}{shape}", max_bytes)
            setattr(self, name, zeros(shape) if name.startswith("b_") else init_weight(rng, shape))

    @property
    def params(self):
        names = self.spec.param_shapes()
        return AdaConvBlockParams(**{name: getattr(self, name) for name in names})

    def weight_path_param_count(self):
        names = ("w_ww",) if self.spec.variant == "naive" else ("w_ww_depthwise", "w_ww_pointwise")
        return int(sum(getattr(self, name).size for name in names))

    def forward(self, x):
        return adaconv_block(x, self.params, self.spec, self.max_bytes)


@dataclass(frozen=True)
class CostReport:
    """Weight-regression cost of one block; flops count 2 per multiply-add."""

    params_naive: int
    params_separable: int
    flops_naive: int
    flops_separable: int
    ratio: float


def cost_model(spec, height=1, width=1):
    """Parameter and flop counts of the weight-regression path, naive vs separable.

    The naive path is one ``K_adaptive`` convolution to ``C_adaptive``
    channels; the separable path is a depthwise ``K_adaptive`` convolution
    (multiplier ``C_depthwise``) followed by a pointwise one. Flops are for an
    output map of ``height x width`` pixels.
    """
    ka2 = spec.k_adaptive**2
    naive = ka2 * spec.c_in * spec.c_adaptive
    separable = ka2 * spec.c_in * spec.c_depthwise + spec.c_depthwise * spec.c_in * spec.c_adaptive
    pixels = height * width
    return CostReport(
        params_naive=naive,
        params_separable=separable,
        flops_naive=2 * naive * pixels,
        flops_separable=2 * separable * pixels,
        ratio=naive / separable,
    )


def audit_cost(spec):
    """Build zero-filled naive and separable blocks and compare their sizes to :func:`cost_model`.

    Returns ``(report, (naive_count, separable_count))``; raises
    ``AssertionError`` on any mismatch.
    """
    report = cost_model(spec)
    counts = []
    for variant in VARIANTS:
        block = AdaConvBlock(AdaConvBlockSpec(spec.k_filter, spec.k_adaptive, spec.c_in, spec.c_out, variant))
        counts.append(block.weight_path_param_count())
    if tuple(counts) != (report.params_naive, report.params_separable):
        raise AssertionError(f"cost model {report} disagrees with constructed tensors {counts}")
    return report, tuple(counts)
