"""Input validation helpers shared by the estimator and the CLI."""

import numpy as np


def check_images(X, multiple=32):
    """Validate an image batch and return it as float64 (N, 3, H, W).

    Raises ``ValueError`` for wrong rank, channel count, non-finite values,
    values outside [0, 1], or sizes not divisible by ``multiple``.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"images must have shape (N, 3, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("at least one image is required")
    X = X.astype(np.float64, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"image values must lie in [0, 1], got [{X.min()}, {X.max()}]")
    h, w = X.shape[-2:]
    if h % multiple or w % multiple:
        raise ValueError(f"image height and width must be divisible by {multiple}, got {h}x{w}")
    return X


def check_labels(y, n_samples):
    y = np.asarray(y).astype(np.int64).ravel()
    if y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} labels for {n_samples} images")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (genuine) or 1 (manipulated)")
    return y


def check_masks(masks, X, y):
    """Validate (N, H, W) binary masks against images and labels.

    ``None`` is accepted only when every sample is genuine.
    """
    n, _, h, w = X.shape
    if masks is None:
        if np.any(y == 1):
            raise ValueError("masks are required when manipulated samples are present")
        return np.zeros((n, h, w), dtype=np.uint8)
    masks = np.asarray(masks)
    if masks.shape != (n, h, w):
        raise ValueError(f"masks must have shape {(n, h, w)}, got {masks.shape}")
    masks = (masks > 0).astype(np.uint8)
    has_fg = masks.reshape(n, -1).any(axis=1)
    if np.any(has_fg & (y == 0)):
        raise ValueError("genuine samples must have empty masks")
    if np.any(~has_fg & (y == 1)):
        raise ValueError("manipulated samples must have a non-empty mask")
    return masks
