"""Feature-vector reconstructors.

Two kinds are provided:

* :func:`blob_reconstruct` / :class:`BlobReconstructor`: nonparametric,
  per-target greedy search that adds Gaussian blobs to the current image and
  keeps the candidate whose black-box features best match the target. After
  each blob is added the candidates are snapped onto an attacker-owned
  eigenface prior, which costs no victim queries.
* :class:`LinearDecoder`: parametric ridge regression from feature vectors
  to pixels, trained on attacker images labelled through the black box.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import check_images, check_is_fitted, check_vectors
from .corpus import save_image

LOSSES = ("cosine_distance", "l2")


class ReconstructionError(RuntimeError):
    def __init__(self, message, iteration=None, target_index=None):
        super().__init__(message)
        self.iteration = iteration
        self.target_index = target_index


@dataclass(frozen=True)
class Blob:
    cx: float
    cy: float
    sigma: float
    amplitude: float

    def render(self, shape):
        h, w = shape
        gx = np.exp(-((np.arange(w) - self.cx) ** 2) / (2 * self.sigma ** 2))
        gy = np.exp(-((np.arange(h) - self.cy) ** 2) / (2 * self.sigma ** 2))
        return self.amplitude * np.outer(gy, gx)


@dataclass(frozen=True)
class BlobSearchConfig:
    iterations: int = 2000
    candidates_per_iter: int = 64
    sigma_range: tuple = None  # None -> (1, min(w, h) / 4)
    amplitude_max: float = 0.5
    loss: str = "cosine_distance"
    normalize_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.candidates_per_iter < 1:
            raise ValueError("candidates_per_iter must be >= 1")
        if self.normalize_every < 1:
            raise ValueError("normalize_every must be >= 1")
        if self.amplitude_max < 0:
            raise ValueError("amplitude_max must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.sigma_range is not None:
            lo, hi = self.sigma_range
            if not 0 < lo <= hi:
                raise ValueError(f"sigma_range must satisfy 0 < min <= max, got {self.sigma_range}")
            object.__setattr__(self, "sigma_range", (float(lo), float(hi)))

    def resolved_sigma_range(self, image_shape):
        if self.sigma_range is not None:
            return self.sigma_range
        h, w = image_shape
        return (1.0, max(1.0, min(w, h) / 4.0))

    def with_seed(self, seed):
        return BlobSearchConfig(**{**asdict(self), "seed": int(seed)})


@dataclass
class ReconstructionResult:
    """One reconstructed image plus its search trace.

    For decoder reconstructions ``loss_trace`` is empty and
    ``queries_used`` is 0: decoding never touches the black box.
    """

    image: np.ndarray
    loss_trace: list = field(default_factory=list)
    queries_used: int = 0
    accepted_blobs: int = 0
    seed: int = None

    def save(self, stem, config=None):
        """Write ``<stem>.pgm``, ``<stem>.npy``, ``<stem>_loss.csv`` and ``<stem>.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        save_image(self.image, stem.with_suffix(".pgm"))
        np.save(stem.with_suffix(".npy"), np.asarray(self.image, dtype="<f8"))
        with open(f"{stem}_loss.csv", "w") as fh:
            fh.write("iteration,loss\n")
            for i, val in enumerate(self.loss_trace):
                fh.write(f"{i},{float(val)!r}\n")
        summary = {
            "queries_used": self.queries_used,
            "accepted_blobs": self.accepted_blobs,
            "seed": self.seed,
            "config": config,
        }
        with open(stem.with_suffix(".json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cosine_distance(F, target):
    """Row-wise ``1 - cos(F_i, target)``; a zero-norm side counts as distance 1."""
    F = np.atleast_2d(F)
    denom = np.linalg.norm(F, axis=1) * np.linalg.norm(target)
    dots = F @ target
    out = np.ones(len(F))
    zero = denom == 0
    # NaN features must propagate so the caller can detect them
    out[~zero] = 1.0 - dots[~zero] / denom[~zero]
    return out


def l2_distance(F, target):
    return np.linalg.norm(np.atleast_2d(F) - target, axis=1)


def _loss_fn(name):
    return cosine_distance if name == "cosine_distance" else l2_distance


def cosine_similarity(a, b):
    return 1.0 - cosine_distance(np.asarray(a)[None], np.asarray(b))[0]


def sample_blobs(rng, n, image_shape, sigma_range, amplitude_max):
    """Draw ``n`` blobs: uniform centers, log-uniform widths, uniform signed amplitudes."""
    h, w = image_shape
    cx = rng.uniform(0.0, w - 1, n)
    cy = rng.uniform(0.0, h - 1, n)
    sigma = np.exp(rng.uniform(np.log(sigma_range[0]), np.log(sigma_range[1]), n))
    amp = rng.uniform(-amplitude_max, amplitude_max, n)
    return cx, cy, sigma, amp


def render_blobs(cx, cy, sigma, amp, image_shape):
    h, w = image_shape
    two_s2 = 2.0 * sigma[:, None] ** 2
    gx = np.exp(-((np.arange(w)[None, :] - cx[:, None]) ** 2) / two_s2)
    gy = np.exp(-((np.arange(h)[None, :] - cy[:, None]) ** 2) / two_s2)
    return amp[:, None, None] * gy[:, :, None] * gx[:, None, :]


def blob_reconstruct(black_box, prior, target_v, cfg):
    """Greedy Gaussian-blob search for an image whose features match ``target_v``.

    The search starts from the prior's mean face (1 query), then for each of
    ``cfg.iterations`` rounds evaluates ``cfg.candidates_per_iter`` candidates
    (that many queries) and adopts the best one only if it strictly lowers
    the loss. Total queries are exactly ``1 + iterations * candidates``.
    """
    check_is_fitted(prior, "components_")
    shape = tuple(prior.image_shape_)
    if tuple(black_box.image_shape) != shape:
        raise ValueError(
            f"prior image shape {shape} differs from black box {tuple(black_box.image_shape)}"
        )
    target = check_vectors(target_v, black_box.n_components, name="target_v")[0]
    loss_fn = _loss_fn(cfg.loss)
    sigma_range = cfg.resolved_sigma_range(shape)
    rng = np.random.default_rng(cfg.seed)

    x = np.clip(prior.mean_, 0.0, 1.0).copy()
    loss = float(loss_fn(black_box(x[None]), target)[0])
    if not np.isfinite(loss):
        raise ReconstructionError("non-finite loss at initialization", iteration=0)
    trace = [loss]
    accepted = 0
    for it in range(cfg.iterations):
        blobs = render_blobs(*sample_blobs(rng, cfg.candidates_per_iter, shape, sigma_range,
                                           cfg.amplitude_max), shape)
        cand = x[None] + blobs
        if it % cfg.normalize_every == 0:
            cand = prior.project(cand)
        else:
            cand = np.clip(cand, 0.0, 1.0)
        losses = loss_fn(black_box(cand), target)
        if not np.all(np.isfinite(losses)):
            raise ReconstructionError(f"non-finite loss at iteration {it + 1}", iteration=it + 1)
        best = int(np.argmin(losses))
        if losses[best] < loss:
            x = cand[best]
            loss = float(losses[best])
            accepted += 1
        trace.append(loss)

    return ReconstructionResult(
        image=x,
        loss_trace=trace,
        queries_used=1 + cfg.iterations * cfg.candidates_per_iter,
        accepted_blobs=accepted,
        seed=cfg.seed,
    )


class BlobReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`blob_reconstruct`.

    ``predict`` maps a matrix of target feature vectors to reconstructed
    images; per-target seeds derive from ``seed`` and the row index.
    """

    def __init__(self, black_box=None, prior=None, iterations=2000, candidates_per_iter=64,
                 sigma_range=None, amplitude_max=0.5, loss="cosine_distance",
                 normalize_every=1, seed=0):
        self.black_box = black_box
        self.prior = prior
        self.iterations = iterations
        self.candidates_per_iter = candidates_per_iter
        self.sigma_range = sigma_range
        self.amplitude_max = amplitude_max
        self.loss = loss
        self.normalize_every = normalize_every
        self.seed = seed

    @property
    def config(self):
        return BlobSearchConfig(
            iterations=self.iterations,
            candidates_per_iter=self.candidates_per_iter,
            sigma_range=self.sigma_range,
            amplitude_max=self.amplitude_max,
            loss=self.loss,
            normalize_every=self.normalize_every,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        # nonparametric: nothing to learn, only validate the wiring
        if self.black_box is None or self.prior is None:
            raise ValueError("BlobReconstructor needs both a black_box and a prior")
        self.config
        return self

    def reconstruct(self, v, seed=None):
        cfg = self.config if seed is None else self.config.with_seed(seed)
        return blob_reconstruct(self.black_box, self.prior, v, cfg)

    def predict(self, V, jobs=1):
        V = check_vectors(V, name="V")
        return np.stack([r.image for r in reconstruct_batch(self, list(V), jobs=jobs)])


class LinearDecoder(RegressorMixin, BaseEstimator):
    """Ridge-regularized affine map from feature vectors to images.

    Solves ``min_{W,b} sum_j ||W v_j + b - x_j||^2 + ridge_lambda * ||W||^2``
    with an unpenalized bias.

    Attributes
    ----------
    weights_ : ndarray of shape (h * w, M)
    bias_ : ndarray of shape (h, w)
    image_shape_ : tuple (h, w)
    """

    def __init__(self, ridge_lambda=1e-3):
        self.ridge_lambda = ridge_lambda

    def fit(self, V, X):
        lam = float(self.ridge_lambda)
        if lam < 0:
            raise ValueError("ridge_lambda must be >= 0")
        V = check_vectors(V)
        X = check_images(X)
        if len(V) != len(X) or len(V) == 0:
            raise ValueError(f"need matching non-empty V and X, got {len(V)} and {len(X)}")
        n, M = V.shape
        flat = X.reshape(n, -1)
        v_mean = V.mean(axis=0)
        x_mean = flat.mean(axis=0)
        Vc = V - v_mean
        gram = Vc.T @ Vc + lam * np.eye(M)
        if lam == 0 and np.linalg.matrix_rank(gram) < M:
            raise np.linalg.LinAlgError(
                "normal equations are singular at ridge_lambda=0; use ridge_lambda > 0"
            )
        # W^T = gram^-1 Vc^T Xc
        Wt = np.linalg.solve(gram, Vc.T @ (flat - x_mean))
        self.weights_ = Wt.T
        self.bias_ = (x_mean - self.weights_ @ v_mean).reshape(X.shape[1:])
        self.image_shape_ = tuple(X.shape[1:])
        self.n_features_in_ = M
        return self

    def decode_raw(self, V):
        """Affine decode without clamping, shape (n, h, w)."""
        check_is_fitted(self, "weights_")
        V = check_vectors(V, self.n_features_in_)
        flat = V @ self.weights_.T + self.bias_.reshape(-1)
        return flat.reshape(len(V), *self.image_shape_)

    def predict(self, V):
        return np.clip(self.decode_raw(V), 0.0, 1.0)

    def decode(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"decode expects one feature vector, got shape {v.shape}")
        return self.predict(v[None])[0]

    def score(self, V, X):
        # negative RMS pixel error; sklearn's R^2 is meaningless per-pixel here
        X = check_images(X, self.image_shape_)
        return -float(np.sqrt(np.mean((self.predict(V) - X) ** 2)))


def fit_linear_decoder(train, extractor, ridge_lambda=1e-3):
    """Label ``train`` images through the black box (``len(train)`` queries) and fit a decoder."""
    if len(train) == 0:
        raise ValueError("cannot fit a decoder on an empty gallery")
    V = extractor(train.images)
    return LinearDecoder(ridge_lambda=ridge_lambda).fit(V, train.images)


def decode(d, v):
    return d.decode(v)


def derive_seed(seed, index):
    """Independent per-target seed derived from a base seed and a position."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _reconstruct_one(reconstructor, index, v):
    try:
        if isinstance(reconstructor, LinearDecoder):
            return ReconstructionResult(image=reconstructor.decode(v))
        return reconstructor.reconstruct(v, seed=derive_seed(reconstructor.seed, index))
    except Exception as exc:
        if isinstance(exc, ReconstructionError) and exc.target_index is not None:
            raise
        err = ReconstructionError(f"target {index}: {exc}",
                                  iteration=getattr(exc, "iteration", None),
                                  target_index=index)
        raise err from exc


def reconstruct_batch(reconstructor, targets, jobs=1):
    """Reconstruct every target vector, preserving order.

    Each target gets the seed ``derive_seed(reconstructor.seed, i)``, so the
    result is independent of ``jobs`` and of scheduling.
    """
    targets = list(targets)
    if not targets:
        return []
    if jobs <= 1 or len(targets) == 1:
        return [_reconstruct_one(reconstructor, i, v) for i, v in enumerate(targets)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_reconstruct_one, reconstructor, i, v)
                   for i, v in enumerate(targets)]
        return [f.result() for f in futures]
