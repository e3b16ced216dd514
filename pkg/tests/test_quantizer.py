import numpy as np
import pytest
from sklearn.base import clone

from biphase.errors import ConfigError, DataError, FileFormatError
from biphase.quantizer import (
    PQCodebook,
    ProductQuantizer,
    adc_score,
    batch_adc,
    encode,
    encode_batch,
    kmeanspp_init,
    lloyd_kmeans,
    load_codebook,
    load_codes,
    reconstruct,
    reconstruct_batch,
    save_codebook,
    save_codes,
    train_codebook,
)


def reference_lloyd(points, init, max_iters=200):
    """Independent Lloyd's oracle: plain loops, run to convergence."""
    points = np.asarray(points, dtype=float)
    centroids = np.array(init, dtype=float)
    k = len(centroids)
    for _ in range(max_iters):
        assign = []
        for x in points:
            dists = [np.sum((x - c) ** 2) for c in centroids]
            assign.append(int(np.argmin(dists)))
        new = centroids.copy()
        for c in range(k):
            members = [points[i] for i in range(len(points)) if assign[i] == c]
            if members:
                new[c] = np.mean(members, axis=0)
        if np.allclose(new, centroids, atol=1e-12):
            centroids = new
            break
        centroids = new
    distortion = 0.0
    for x in points:
        distortion += min(np.sum((x - c) ** 2) for c in centroids)
    return centroids, distortion / len(points)


def toy_codebook():
    # 2 sub-spaces of width 2, 2 centroids each, chosen by hand
    cents = np.array(
        [
            [[0.0, 0.0], [1.0, 1.0]],
            [[2.0, 0.0], [0.0, 2.0]],
        ],
        dtype=np.float32,
    )
    return PQCodebook(cents)


class TestTrainCodebook:
    def test_n_equals_k_recovers_points(self):
        points = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        cb = train_codebook(points, m=1, k=4, seed=0)
        got = sorted(map(tuple, cb.centroids[0].tolist()))
        assert got == sorted(map(tuple, points.tolist()))
        codes = encode_batch(cb, points)
        np.testing.assert_allclose(reconstruct_batch(cb, codes), points)

    def test_identical_points_degenerate(self):
        points = np.tile([1.5, -2.0], (10, 1))
        cb = train_codebook(points, m=1, k=2, seed=1)
        np.testing.assert_allclose(cb.centroids[0], np.tile([1.5, -2.0], (2, 1)), atol=1e-6)
        code = encode(cb, points[0])
        assert np.sum((reconstruct(cb, code) - points[0]) ** 2) == pytest.approx(0.0)

    def test_seeded_gaussian_matches_reference_lloyd(self):
        rng = np.random.default_rng(42)
        points = rng.normal(size=(100, 4))
        cb = train_codebook(points, m=2, k=4, seed=7)
        for s in range(2):
            sub = points[:, 2 * s : 2 * s + 2]
            init = kmeanspp_init(sub, 4, np.random.default_rng([7, s]))
            _, ref_distortion = reference_lloyd(sub, init)
            d2 = (
                (sub**2).sum(1)[:, None]
                - 2 * sub @ cb.centroids[s].T.astype(float)
                + (cb.centroids[s].astype(float) ** 2).sum(1)[None]
            )
            got = float(d2.min(axis=1).mean())
            assert got <= ref_distortion * 1.05 + 1e-9

    def test_distortion_non_increasing_per_iteration(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(60, 3))
        _, history = lloyd_kmeans(points, 5, np.random.default_rng(5), max_iters=25)
        assert all(a >= b - 1e-12 for a, b in zip(history, history[1:]))

    def test_deterministic_bit_for_bit(self):
        rng = np.random.default_rng(9)
        points = rng.normal(size=(50, 4))
        a = train_codebook(points, m=2, k=4, seed=11)
        b = train_codebook(points, m=2, k=4, seed=11)
        assert a.centroids.tobytes() == b.centroids.tobytes()

    def test_too_few_points(self):
        with pytest.raises(DataError):
            train_codebook(np.zeros((3, 4)), m=2, k=4)

    def test_non_finite_rejected(self):
        bad = np.zeros((8, 4))
        bad[0, 0] = np.nan
        with pytest.raises(DataError):
            train_codebook(bad, m=2, k=4)

    def test_m_must_divide_dim(self):
        with pytest.raises(ConfigError):
            train_codebook(np.zeros((8, 5)), m=2, k=2)


class TestEncode:
    def test_exact_centroid_match(self):
        cb = toy_codebook()
        x = np.array([1.0, 1.0, 0.0, 2.0])
        np.testing.assert_array_equal(encode(cb, x), [1, 1])

    def test_equidistant_tie_smaller_index(self):
        cb = toy_codebook()
        # sub-space 0: (0.5, 0.5) is equidistant from both centroids
        x = np.array([0.5, 0.5, 2.0, 0.0])
        np.testing.assert_array_equal(encode(cb, x), [0, 0])

    def test_seeded_matches_exhaustive_argmin(self):
        rng = np.random.default_rng(21)
        cb = PQCodebook(rng.normal(size=(3, 5, 2)).astype(np.float32))
        for _ in range(20):
            x = rng.normal(size=6)
            code = encode(cb, x)
            for s in range(3):
                dists = [
                    float(np.sum((x[2 * s : 2 * s + 2] - cb.centroids[s, c].astype(float)) ** 2))
                    for c in range(5)
                ]
                assert code[s] == int(np.argmin(dists))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(22)
        cb = PQCodebook(rng.normal(size=(2, 4, 3)).astype(np.float32))
        xs = rng.normal(size=(10, 6))
        batch = encode_batch(cb, xs)
        for i in range(10):
            np.testing.assert_array_equal(batch[i], encode(cb, xs[i]))

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            encode(toy_codebook(), np.array([np.inf, 0.0, 0.0, 0.0]))


class TestReconstruct:
    def test_roundtrip_on_centroids(self):
        cb = toy_codebook()
        x = np.array([1.0, 1.0, 2.0, 0.0])
        np.testing.assert_array_equal(reconstruct(cb, encode(cb, x)), x)

    def test_concatenation(self):
        cb = toy_codebook()
        np.testing.assert_array_equal(reconstruct(cb, [0, 1]), [0.0, 0.0, 0.0, 2.0])

    def test_out_of_range_code(self):
        with pytest.raises(ConfigError):
            reconstruct(toy_codebook(), [0, 2])


class TestAdc:
    def test_zero_query(self):
        cb = toy_codebook()
        assert adc_score(cb, np.zeros(4), [1, 1]) == 0.0

    def test_exact_reconstruction_gives_inner_product(self):
        cb = toy_codebook()
        q = np.array([0.5, -1.0, 2.0, 0.25])
        x = np.array([1.0, 1.0, 0.0, 2.0])
        assert adc_score(cb, q, encode(cb, x)) == pytest.approx(float(q @ x))

    def test_seeded_matches_reconstruct_then_dot(self):
        rng = np.random.default_rng(31)
        cb = PQCodebook(rng.normal(size=(4, 6, 2)).astype(np.float32))
        for _ in range(50):
            q = rng.normal(size=8)
            code = rng.integers(0, 6, size=4)
            direct = float(q @ reconstruct(cb, code))
            got = adc_score(cb, q, code)
            assert got == pytest.approx(direct, rel=1e-5, abs=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(33)
        cb = PQCodebook(rng.normal(size=(3, 4, 2)).astype(np.float32))
        q = rng.normal(size=6)
        codes = rng.integers(0, 4, size=(25, 3))
        batch = batch_adc(cb, q, codes)
        for i in range(25):
            assert batch[i] == pytest.approx(adc_score(cb, q, codes[i]), rel=1e-12)

    def test_adc_equals_exact_when_subvectors_are_centroids(self):
        rng = np.random.default_rng(35)
        docs = rng.normal(size=(4, 6))
        # one centroid per doc sub-vector in every sub-space
        cents = np.stack([docs[:, 2 * s : 2 * s + 2] for s in range(3)]).astype(np.float32)
        cb = PQCodebook(cents)
        docs = reconstruct_batch(cb, encode_batch(cb, docs.astype(np.float32).astype(float)))
        for i in range(4):
            code = encode(cb, docs[i])
            np.testing.assert_allclose(reconstruct(cb, code), docs[i], atol=1e-12)
            q = rng.normal(size=6)
            assert adc_score(cb, q, code) == pytest.approx(float(q @ docs[i]), rel=1e-5)


class TestCodebookFiles:
    def test_codebook_roundtrip(self, tmp_path):
        rng = np.random.default_rng(41)
        cb = PQCodebook(rng.normal(size=(2, 3, 2)).astype(np.float32))
        path = tmp_path / "cb.bin"
        save_codebook(cb, str(path))
        loaded = load_codebook(str(path))
        np.testing.assert_array_equal(loaded.centroids, cb.centroids)

    def test_codes_roundtrip(self, tmp_path):
        codes = np.array([[0, 1], [2, 3], [4, 5]], dtype=np.uint8)
        path = tmp_path / "codes.bin"
        save_codes(codes, str(path))
        np.testing.assert_array_equal(load_codes(str(path)), codes)

    def test_codes_require_byte_range(self, tmp_path):
        with pytest.raises(ConfigError):
            save_codes(np.array([[300]], dtype=np.uint16), str(tmp_path / "x.bin"))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "cb.bin"
        path.write_bytes(b"WRNG" + b"\x00" * 12)
        with pytest.raises(FileFormatError):
            load_codebook(str(path))


class TestProductQuantizerEstimator:
    def test_fit_transform_inverse(self):
        rng = np.random.default_rng(51)
        X = rng.normal(size=(40, 6))
        pq = ProductQuantizer(n_subspaces=3, n_centroids=4, seed=2)
        codes = pq.fit_transform(X)
        assert codes.shape == (40, 3)
        recon = pq.inverse_transform(codes)
        assert recon.shape == X.shape
        np.testing.assert_allclose(pq.adc(X[0], codes), recon @ X[0], rtol=1e-6)

    def test_get_params_and_clone(self):
        pq = ProductQuantizer(n_subspaces=2, n_centroids=8, seed=5)
        params = pq.get_params()
        assert params["n_subspaces"] == 2 and params["seed"] == 5
        twin = clone(pq)
        assert twin.get_params() == params

    def test_unfitted_transform_raises(self):
        with pytest.raises(Exception):
            ProductQuantizer(n_subspaces=2, n_centroids=2).transform(np.zeros((2, 4)))
