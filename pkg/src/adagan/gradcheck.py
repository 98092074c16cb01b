"""Central finite-difference checks of tape gradients.

The scalar under test is a fixed random projection ``sum(R * f(...))`` of the
op output, so every output element contributes. Tape gradients come from the
normal float32 path. The difference quotients are evaluated in float64 by
default (see :func:`adagan.tensor.precision`): at eps=1e-3 float32 rounding
alone produces relative errors above 1e-3 on ordinary entries, which would
make the oracle noisier than the thing it checks.

Entries whose left and right one-sided differences disagree sit on a kink
(e.g. a ReLU input within eps of zero); those are resampled instead of scored.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, mul, precision, sum as tsum


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int = 0
    errors: dict = field(default_factory=dict)

    def passed(self, rtol):
        return self.checked > 0 and self.max_rel_error <= rtol


def relative_error(analytic, numeric, floor=0.0):
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom if denom > 0 else 0.0


def check_gradients(fn, inputs, rng, eps=1e-3, n_elements=6, floor=None,
                    oracle_dtype=np.float64, kink_tol=0.01):
    """Compare d/dx of a random projection of ``fn()`` against central differences.

    ``fn`` takes no arguments and reads the tensors in ``inputs``; each must
    require gradients. ``n_elements`` random entries per input are probed.
    ``floor`` bounds the relative-error denominator from below; the default is
    1e-6 of the largest analytic entry of that input, which only matters for
    entries that are zero up to rounding.
    """
    out = fn()
    proj = rng.normal(out.shape)
    for x in inputs:
        x.grad = None
    with Tape() as tape:
        loss = tsum(mul(fn(), Tensor(proj)))
    tape.backward(loss)
    analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in inputs]

    originals = [x.data for x in inputs]
    result = GradCheckResult(0.0, 0)
    try:
        for x in inputs:
            x.data = x.data.astype(oracle_dtype)
        proj_flat = proj.astype(oracle_dtype).ravel()

        def probe():
            with precision(oracle_dtype):
                return float(np.dot(fn().data.astype(oracle_dtype).ravel(), proj_flat))

        f0 = probe()
        for k, x in enumerate(inputs):
            grad = analytic[k].reshape(-1)
            lo = floor if floor is not None else 1e-6 * float(np.abs(grad).max())
            flat = x.data.reshape(-1)
            worst, scored = 0.0, 0
            for idx in rng.permutation(flat.size):
                if scored == n_elements:
                    break
                orig = flat[idx]
                flat[idx] = orig + eps
                f_hi = probe()
                flat[idx] = orig - eps
                f_lo = probe()
                flat[idx] = orig
                right, left = (f_hi - f0) / eps, (f0 - f_lo) / eps
                if abs(right - left) > kink_tol * max(abs(right), abs(left), lo, 1e-12):
                    result.skipped += 1
                    continue
                numeric = (f_hi - f_lo) / (2 * eps)
                worst = max(worst, relative_error(float(grad[idx]), numeric, lo))
                scored += 1
            result.errors[x.name or f"input{k}"] = worst
            result.max_rel_error = max(result.max_rel_error, worst)
            result.checked += scored
    finally:
        for x, data in zip(inputs, originals):
            x.data = data
    return result
