"""Input checks shared by the estimators and the evaluation code."""
import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionError


def check_images(X, side=None, name="X"):
    """Validate an (N, M, M, 3) image batch in [-1, 1]; returns a float32 array."""
    X = check_array(np.asarray(getattr(X, "data", X)), allow_nd=True, dtype=np.float32, ensure_min_samples=1)
    if X.ndim != 4 or X.shape[-1] != 3 or X.shape[1] != X.shape[2]:
        raise DimensionError(f"{name} must have shape (N, M, M, 3), got {X.shape}")
    if side is not None and X.shape[1] != side:
        raise DimensionError(f"{name} images are {X.shape[1]}px, expected {side}px")
    if X.min() < -1.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [-1, 1], got [{X.min():.3g}, {X.max():.3g}]")
    return X


def check_binary_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"y must have shape ({n},), got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must contain only 0 and 1")
    return y.astype(np.int64)
