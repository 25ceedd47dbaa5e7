"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.exceptions import NotFittedError


def check_images(X, image_shape=None, name="X"):
    """Coerce ``X`` to a float64 stack of shape (n, h, w).

    A single (h, w) image is promoted to a stack of one. Flattened input of
    shape (n, h*w) is accepted when ``image_shape`` is known.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2 and image_shape is not None and X.shape == tuple(image_shape):
        X = X[None]
    elif X.ndim == 2 and image_shape is not None and X.shape[1] == image_shape[0] * image_shape[1]:
        X = X.reshape(-1, *image_shape)
    elif X.ndim == 2 and image_shape is None:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must be an image stack (n, h, w), got shape {X.shape}")
    if image_shape is not None and X.shape[1:] != tuple(image_shape):
        raise ValueError(
            f"{name} has image shape {X.shape[1:]}, expected {tuple(image_shape)}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite pixels")
    return X


def check_pixel_range(X, name="X"):
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError(f"{name} pixels must lie in [0, 1]")
    return X


def check_vectors(V, n_features=None, name="V"):
    """Coerce feature vectors to a float64 matrix (n, M)."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[None]
    if V.ndim != 2:
        raise ValueError(f"{name} must be a vector or matrix of vectors, got shape {V.shape}")
    if n_features is not None and V.shape[1] != n_features:
        raise ValueError(f"{name} has length {V.shape[1]}, expected {n_features}")
    if not np.all(np.isfinite(V)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return V


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )
