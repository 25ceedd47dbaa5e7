import numpy as np
import pytest
from sklearn.base import clone

from fvrbench.corpus import Gallery
from fvrbench.extractor import EigenfaceModel, QueryLedger, counted, fit_eigenfaces
from fvrbench.reconstruct import (
    Blob,
    BlobReconstructor,
    BlobSearchConfig,
    LinearDecoder,
    ReconstructionError,
    blob_reconstruct,
    cosine_distance,
    cosine_similarity,
    derive_seed,
    fit_linear_decoder,
    reconstruct_batch,
    render_blobs,
)


@pytest.fixture(scope="module")
def small_world():
    rng = np.random.default_rng(3)
    att = rng.uniform(0.2, 0.8, size=(30, 12, 12))
    vic = rng.uniform(0.2, 0.8, size=(30, 12, 12))
    return EigenfaceModel(6).fit(vic), EigenfaceModel(10).fit(att), vic


def test_default_search_budget():
    cfg = BlobSearchConfig()
    assert (cfg.iterations, cfg.candidates_per_iter) == (2000, 64)
    assert cfg.loss == "cosine_distance" and cfg.normalize_every == 1


@pytest.mark.parametrize("kwargs", [
    {"iterations": -1}, {"candidates_per_iter": 0}, {"normalize_every": 0},
    {"sigma_range": (0, 2)}, {"loss": "huber"},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        BlobSearchConfig(**kwargs)


def test_blob_render_matches_vectorized():
    b = Blob(3.5, 2.0, 1.7, -0.4)
    vec = render_blobs(np.array([3.5]), np.array([2.0]), np.array([1.7]), np.array([-0.4]), (6, 9))
    np.testing.assert_allclose(b.render((6, 9)), vec[0], atol=1e-15)
    assert b.render((6, 9))[2, 3] == pytest.approx(-0.4 * np.exp(-0.25 / (2 * 1.7 ** 2)))


def test_zero_iterations_returns_prior_mean(small_world):
    F, prior, _ = small_world
    ledger = QueryLedger()
    r = blob_reconstruct(counted(F, ledger), prior, F.transform(prior.mean_[None])[0] + 1,
                         BlobSearchConfig(iterations=0))
    np.testing.assert_array_equal(r.image, prior.mean_)
    assert len(r.loss_trace) == 1 and r.queries_used == 1 and ledger.count == 1


@pytest.mark.parametrize("normalize_every,loss", [(1, "cosine_distance"), (3, "l2")])
def test_trace_monotone_and_accounting(small_world, normalize_every, loss):
    F, prior, vic = small_world
    ledger = QueryLedger()
    cfg = BlobSearchConfig(iterations=40, candidates_per_iter=8, loss=loss,
                           normalize_every=normalize_every, seed=5)
    r = blob_reconstruct(counted(F, ledger), prior, F.extract(vic[0]), cfg)
    assert len(r.loss_trace) == 41
    assert all(b <= a for a, b in zip(r.loss_trace, r.loss_trace[1:]))
    assert r.queries_used == ledger.count == 1 + 40 * 8
    assert 0 <= r.accepted_blobs <= 40
    assert r.image.min() >= 0 and r.image.max() <= 1


def test_deterministic_given_seed(small_world):
    F, prior, vic = small_world
    cfg = BlobSearchConfig(iterations=30, candidates_per_iter=4, seed=11)
    a = blob_reconstruct(counted(F, QueryLedger()), prior, F.extract(vic[1]), cfg)
    b = blob_reconstruct(counted(F, QueryLedger()), prior, F.extract(vic[1]), cfg)
    assert a.image.tobytes() == b.image.tobytes() and a.loss_trace == b.loss_trace


def test_dimension_mismatch(small_world):
    F, prior, _ = small_world
    with pytest.raises(ValueError):
        blob_reconstruct(counted(F, QueryLedger()), prior, np.zeros(3), BlobSearchConfig(0))
    other = EigenfaceModel(3).fit(np.random.default_rng(0).uniform(size=(8, 5, 5)))
    with pytest.raises(ValueError):
        blob_reconstruct(counted(F, QueryLedger()), other, np.zeros(6), BlobSearchConfig(0))


def test_non_finite_loss_reports_iteration(small_world):
    F, prior, vic = small_world

    class Poisoned:
        image_shape = F.image_shape_
        n_components = F.n_components_
        ledger = QueryLedger()
        calls = 0

        def __call__(self, X):
            self.calls += 1
            out = F.transform(X)
            if self.calls == 4:
                out[0, 0] = np.nan
            return out

    with pytest.raises(ReconstructionError) as info:
        blob_reconstruct(Poisoned(), prior, F.extract(vic[0]), BlobSearchConfig(10, 4))
    assert info.value.iteration == 3


def test_cosine_distance_zero_norm_is_one():
    np.testing.assert_array_equal(cosine_distance(np.zeros((2, 3)), np.ones(3)), [1.0, 1.0])


def test_self_inversion_quality_and_linear_oracle(world):
    F, prior = world["F"], world["prior"]
    v = F.extract(world["probes"].images[0])
    # oracle: the linear inverse on the victim model is an exact preimage
    oracle_img = F.invert_linear(v)
    assert cosine_similarity(F.extract(oracle_img), v) == pytest.approx(1.0, abs=1e-9)
    r = blob_reconstruct(counted(F, QueryLedger()), prior, v,
                         BlobSearchConfig(iterations=2000, candidates_per_iter=64, seed=0))
    assert cosine_similarity(F.extract(r.image), v) >= 0.95
    oracle_loss = cosine_distance(F.extract(oracle_img)[None], v)[0]
    assert r.loss_trace[-1] >= oracle_loss - 1e-9


def test_estimator_wrapper(small_world):
    F, prior, vic = small_world
    rec = BlobReconstructor(counted(F, QueryLedger()), prior, iterations=5, candidates_per_iter=3)
    assert rec.get_params()["iterations"] == 5
    assert clone(rec).get_params()["candidates_per_iter"] == 3
    images = rec.fit().predict(F.transform(vic[:2]))
    assert images.shape == (2, 12, 12)


def test_batch_matches_sequential_and_parallel(small_world):
    F, prior, vic = small_world
    rec = BlobReconstructor(counted(F, QueryLedger()), prior, iterations=15,
                            candidates_per_iter=4, seed=2)
    targets = list(F.transform(vic[:5]))
    seq = reconstruct_batch(rec, targets, jobs=1)
    par = reconstruct_batch(rec, targets, jobs=4)
    manual = [rec.reconstruct(v, seed=derive_seed(2, i)) for i, v in enumerate(targets)]
    for a, b, c in zip(seq, par, manual):
        assert a.image.tobytes() == b.image.tobytes() == c.image.tobytes()
        assert a.loss_trace == b.loss_trace == c.loss_trace
    assert reconstruct_batch(rec, []) == []


def test_batch_error_carries_target_index(small_world):
    F, prior, vic = small_world
    rec = BlobReconstructor(counted(F, QueryLedger()), prior, iterations=1, candidates_per_iter=1)
    targets = [F.extract(vic[0]), np.zeros(2)]
    with pytest.raises(ReconstructionError) as info:
        reconstruct_batch(rec, targets)
    assert info.value.target_index == 1


# --- linear decoder -------------------------------------------------------

def test_decoder_round_trip_full_rank(random_gallery):
    F = fit_eigenfaces(random_gallery, 9)
    ledger = QueryLedger()
    dec = fit_linear_decoder(random_gallery, counted(F, ledger), ridge_lambda=1e-9)
    assert ledger.count == 10
    V = F.transform(random_gallery.images)
    for v in V:
        assert cosine_similarity(F.extract(dec.decode(v)), v) >= 0.99


def test_decoder_matches_least_squares_oracle(random_gallery):
    F = fit_eigenfaces(random_gallery, 4)
    V = F.transform(random_gallery.images)
    X = random_gallery.images.reshape(10, -1)
    dec = LinearDecoder(ridge_lambda=0.0).fit(V, random_gallery.images)
    # oracle: ordinary least squares with an explicit intercept column
    A = np.hstack([V, np.ones((10, 1))])
    coef, *_ = np.linalg.lstsq(A, X, rcond=None)
    oracle = A @ coef
    np.testing.assert_allclose(dec.decode_raw(V).reshape(10, -1), oracle, atol=1e-8)
    for i in range(10):
        rms = np.sqrt(np.mean((dec.decode(V[i]).ravel() - X[i]) ** 2))
        oracle_rms = np.sqrt(np.mean((oracle[i] - X[i]) ** 2))
        assert rms <= oracle_rms + 1e-6


def test_decoder_ridge_limit_is_pixel_mean(random_gallery):
    F = fit_eigenfaces(random_gallery, 4)
    V = F.transform(random_gallery.images)
    dec = LinearDecoder(ridge_lambda=1e12).fit(V, random_gallery.images)
    assert np.max(np.abs(dec.weights_)) < 1e-9
    np.testing.assert_allclose(dec.decode(np.ones(4) * 3), random_gallery.images.mean(axis=0),
                               atol=1e-8)


def test_decoder_affine(random_gallery):
    F = fit_eigenfaces(random_gallery, 4)
    dec = LinearDecoder(1e-3).fit(F.transform(random_gallery.images), random_gallery.images)
    v1, v2 = np.random.default_rng(0).normal(size=(2, 4))
    lhs = dec.decode_raw(v1) + dec.decode_raw(v2) - dec.decode_raw(np.zeros(4))
    np.testing.assert_allclose(lhs, dec.decode_raw(v1 + v2), atol=1e-8)
    np.testing.assert_allclose(dec.decode(np.zeros(4)), np.clip(dec.bias_, 0, 1))


def test_decoder_singular_at_zero_lambda():
    rng = np.random.default_rng(0)
    V = np.repeat(rng.normal(size=(1, 3)), 5, axis=0)
    with pytest.raises(np.linalg.LinAlgError, match="ridge_lambda > 0"):
        LinearDecoder(0.0).fit(V, rng.uniform(size=(5, 4, 4)))


def test_decoder_query_count_hundred_images(faces):
    train = Gallery(faces.images[:100], faces.labels[:100])
    F = fit_eigenfaces(train, 8)
    ledger = QueryLedger()
    fit_linear_decoder(train, counted(F, ledger), 1e-3)
    assert ledger.count == 100


def test_decoder_length_mismatch(random_gallery):
    F = fit_eigenfaces(random_gallery, 4)
    dec = LinearDecoder().fit(F.transform(random_gallery.images), random_gallery.images)
    with pytest.raises(ValueError):
        dec.decode(np.zeros(3))


def test_batch_with_decoder(random_gallery):
    F = fit_eigenfaces(random_gallery, 4)
    dec = LinearDecoder().fit(F.transform(random_gallery.images), random_gallery.images)
    res = reconstruct_batch(dec, list(F.transform(random_gallery.images[:3])), jobs=2)
    assert [r.queries_used for r in res] == [0, 0, 0]
    np.testing.assert_allclose(res[1].image, dec.decode(F.extract(random_gallery.images[1])),
                               atol=1e-12)


def test_result_persistence(small_world, tmp_path):
    F, prior, vic = small_world
    r = blob_reconstruct(counted(F, QueryLedger()), prior, F.extract(vic[0]),
                         BlobSearchConfig(iterations=5, candidates_per_iter=2, seed=1))
    r.save(tmp_path / "r0", config={"iterations": 5})
    np.testing.assert_array_equal(np.load(tmp_path / "r0.npy"), r.image)
    lines = (tmp_path / "r0_loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == 7
    assert [float(l.split(",")[1]) for l in lines[1:]] == r.loss_trace
