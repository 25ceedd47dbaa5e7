"""Eigenface feature extractor and black-box query accounting.

:class:`EigenfaceModel` is a scikit-learn transformer: ``fit`` learns the
mean face and the top principal components, ``transform`` maps images to
raw projection coefficients and ``inverse_transform`` maps coefficients back
to (clamped) images. :func:`counted` wraps a fitted model into a black-box
handle that charges every evaluated image to a :class:`QueryLedger`.
"""

import struct
import threading

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_images, check_is_fitted, check_vectors

_MAGIC = b"FVREIG"
_VERSION = 1


class RankError(ValueError):
    pass


def _canonicalize_signs(components):
    # largest-magnitude entry of each component made positive (first on ties)
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


class EigenfaceModel(TransformerMixin, BaseEstimator):
    """Classical PCA over flattened grayscale face images.

    Parameters
    ----------
    n_components : int
        Number of eigenfaces M kept. Must satisfy
        ``M <= min(n_images - 1, width * height)``.

    Attributes
    ----------
    mean_ : ndarray of shape (h, w)
    components_ : ndarray of shape (M, h * w)
        Orthonormal rows, sign-canonicalized.
    singular_values_ : ndarray of shape (M,)
    image_shape_ : tuple (h, w)
    """

    def __init__(self, n_components=16):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_images(X)
        n, h, w = X.shape
        d = h * w
        M = int(self.n_components)
        if n == 0:
            raise ValueError("cannot fit eigenfaces on an empty gallery")
        upper = min(n - 1, d)
        if M < 1 or M > upper:
            raise ValueError(
                f"n_components={M} out of range; must be in [1, {upper}] "
                f"for {n} images of {h}x{w}"
            )
        flat = X.reshape(n, d)
        mean = flat.mean(axis=0)
        centered = flat - mean
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        tol = (s[0] if s.size else 0.0) * max(n, d) * np.finfo(np.float64).eps
        rank = int(np.sum(s > tol))
        if M > max(rank, 1):
            raise RankError(
                f"n_components={M} exceeds the achievable rank {rank} of the centered data"
            )
        self.mean_ = mean.reshape(h, w)
        self.components_ = _canonicalize_signs(vt[:M])
        self.singular_values_ = s[:M].copy()
        self.image_shape_ = (h, w)
        self.n_features_in_ = d
        return self

    @property
    def n_components_(self):
        check_is_fitted(self, "components_")
        return self.components_.shape[0]

    def transform(self, X):
        """Raw projection coefficients ``<x - mean, component_i>``."""
        check_is_fitted(self, "components_")
        X = check_images(X, self.image_shape_)
        flat = X.reshape(len(X), -1) - self.mean_.reshape(-1)
        return flat @ self.components_.T

    def extract(self, x):
        """Feature vector of a single image."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"extract expects one (h, w) image, got shape {x.shape}")
        return self.transform(x[None])[0]

    def inverse_transform(self, V, clip=True):
        """``mean + sum_i v_i * component_i``, clamped to [0, 1] unless ``clip=False``."""
        check_is_fitted(self, "components_")
        V = check_vectors(V, self.n_components_)
        flat = V @ self.components_ + self.mean_.reshape(-1)
        out = flat.reshape(len(V), *self.image_shape_)
        return np.clip(out, 0.0, 1.0) if clip else out

    def invert_linear(self, v, clip=True):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"invert_linear expects one feature vector, got shape {v.shape}")
        return self.inverse_transform(v[None], clip=clip)[0]

    def project(self, X):
        """Snap images onto the eigenface subspace and clamp to [0, 1]."""
        return self.inverse_transform(self.transform(X), clip=True)

    def save(self, path):
        """Flat little-endian binary: header, then mean, components, singular values."""
        check_is_fitted(self, "components_")
        h, w = self.image_shape_
        M = self.n_components_
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<4I", _VERSION, h, w, M))
            fh.write(self.mean_.astype("<f8").tobytes())
            fh.write(self.components_.astype("<f8").tobytes())
            fh.write(self.singular_values_.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:len(_MAGIC)] != _MAGIC:
            raise ValueError(f"{path}: not an eigenface model file")
        off = len(_MAGIC)
        version, h, w, M = struct.unpack_from("<4I", blob, off)
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        off += 16
        d = h * w
        expected = off + 8 * (d + M * d + M)
        if len(blob) != expected:
            raise ValueError(f"{path}: truncated or oversized model file")
        data = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
        model = cls(n_components=M)
        model.mean_ = data[:d].reshape(h, w)
        model.components_ = data[d:d + M * d].reshape(M, d)
        model.singular_values_ = data[d + M * d:]
        model.image_shape_ = (h, w)
        model.n_features_in_ = d
        return model


def fit_eigenfaces(g, n_components):
    """Fit an :class:`EigenfaceModel` on the images of a gallery."""
    return EigenfaceModel(n_components=n_components).fit(g.images)


class QueryLedger:
    """Thread-safe, monotone counter of black-box extractor invocations."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self):
        return self._count

    def charge(self, n):
        if n < 0:
            raise ValueError("query charges must be non-negative")
        with self._lock:
            self._count += int(n)

    def __deepcopy__(self, memo):
        # copies of a handle keep charging the same budget
        return self

    def __repr__(self):
        return f"QueryLedger(count={self._count})"


class CountedExtractor:
    """Black-box handle around a fitted extractor.

    Calling it on an image stack returns the feature matrix and charges one
    query per image to the ledger. Only the interface a remote API would
    expose is public: feature size, image shape and the call itself.
    """

    def __init__(self, model, ledger=None, name="F"):
        check_is_fitted(model, "components_")
        self._model = model
        self.ledger = ledger if ledger is not None else QueryLedger()
        self.name = name

    @property
    def n_components(self):
        return self._model.n_components_

    @property
    def image_shape(self):
        return self._model.image_shape_

    def __call__(self, X):
        X = check_images(X, self.image_shape)
        feats = self._model.transform(X)
        self.ledger.charge(len(X))
        return feats

    def extract(self, x):
        return self(np.asarray(x)[None])[0]


def counted(model, ledger, name="F"):
    return CountedExtractor(model, ledger, name=name)
