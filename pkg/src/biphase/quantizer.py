"""Product quantization: per-sub-space k-means codebooks, codes, ADC scoring.

Scoring is by inner product: a raw query vector against a quantized document
is the sum of per-sub-space query/centroid inner products, which equals the
inner product with the reconstructed vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, DataError
from . import fileio

CODEBOOK_MAGIC = b"BPQ1"
CODES_MAGIC = b"BPC1"


@dataclass
class PQCodebook:
    centroids: np.ndarray  # (m, k, dim/m) float32

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 3:
            raise ConfigError("centroids must have shape (m, k, dim/m)")
        if not np.isfinite(self.centroids).all():
            raise ConfigError("codebook centroids contain non-finite values")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    def code_dtype(self) -> np.dtype:
        return np.dtype(np.uint8 if self.k <= 256 else np.uint16)


def kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, later ones weighted by D^2."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    idx = int(rng.integers(n))
    centroids[0] = points[idx]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2; avoids the (n, k, dim) intermediate.
    d2 = (
        (points**2).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def lloyd_kmeans(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iters: int = 25,
    tol: float = 1e-6,
) -> tuple[np.ndarray, list[float]]:
    """Lloyd iterations from a k-means++ start.

    Returns the centroids and the mean squared distortion measured after each
    assignment step. Empty clusters are re-seeded to the point currently
    farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    centroids = kmeanspp_init(points, k, rng)
    history: list[float] = []
    for _ in range(max_iters):
        d2 = _squared_distances(points, centroids)
        assign = d2.argmin(axis=1)
        own = d2[np.arange(n), assign]
        history.append(float(own.mean()))

        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, points)
        counts = np.bincount(assign, minlength=k)
        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        farthest = own.copy()
        for c in np.flatnonzero(~nonempty):
            idx = int(farthest.argmax())
            new_centroids[c] = points[idx]
            farthest[idx] = -np.inf

        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if movement < tol:
            break
    return centroids, history


def train_codebook(
    embeddings: np.ndarray,
    m: int,
    k: int,
    seed: int = 0,
    max_iters: int = 25,
    tol: float = 1e-6,
) -> PQCodebook:
    """Independent k-means per sub-space over the embedding slices."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"embeddings must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise DataError("embeddings contain non-finite values")
    n, dim = x.shape
    if n < k:
        raise DataError(f"need at least k={k} training vectors, got {n}")
    if m < 1 or dim % m != 0:
        raise ConfigError(f"m={m} must divide the embedding dimension {dim}")
    sub = dim // m
    centroids = np.empty((m, k, sub), dtype=np.float64)
    for s in range(m):
        rng = np.random.default_rng([seed, s])
        centroids[s], _ = lloyd_kmeans(x[:, s * sub : (s + 1) * sub], k, rng, max_iters, tol)
    return PQCodebook(centroids.astype(np.float32))


def _split(cb: PQCodebook, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cb.dim:
        raise ConfigError(f"vector dimension {x.shape[-1]} != codebook dimension {cb.dim}")
    return x.reshape(*x.shape[:-1], cb.m, cb.sub_dim)


def encode(cb: PQCodebook, x: np.ndarray) -> np.ndarray:
    """Nearest centroid per sub-space (squared Euclidean, ties to smaller index)."""
    if not np.isfinite(x).all():
        raise DataError("cannot encode a non-finite vector")
    subs = _split(cb, x)
    code = np.empty(cb.m, dtype=cb.code_dtype())
    for s in range(cb.m):
        d2 = ((cb.centroids[s].astype(np.float64) - subs[s]) ** 2).sum(axis=1)
        code[s] = int(d2.argmin())
    return code


def encode_batch(cb: PQCodebook, xs: np.ndarray) -> np.ndarray:
    if xs.ndim != 2:
        raise ConfigError(f"expected a 2-D matrix, got shape {xs.shape}")
    if not np.isfinite(xs).all():
        raise DataError("cannot encode non-finite vectors")
    subs = _split(cb, xs)  # (n, m, sub)
    codes = np.empty((xs.shape[0], cb.m), dtype=cb.code_dtype())
    for s in range(cb.m):
        d2 = _squared_distances(subs[:, s, :], cb.centroids[s].astype(np.float64))
        codes[:, s] = d2.argmin(axis=1)
    return codes


def _check_code(cb: PQCodebook, code: np.ndarray) -> np.ndarray:
    code = np.asarray(code)
    if code.shape[-1] != cb.m:
        raise ConfigError(f"code length {code.shape[-1]} != m={cb.m}")
    if code.min(initial=0) < 0 or code.max(initial=0) >= cb.k:
        raise ConfigError(f"code contains centroid indices outside [0, {cb.k})")
    return code.astype(np.intp)


def reconstruct(cb: PQCodebook, code: np.ndarray) -> np.ndarray:
    """Concatenation of the selected centroids."""
    code = _check_code(cb, code)
    return cb.centroids[np.arange(cb.m), code].astype(np.float64).reshape(-1)


def reconstruct_batch(cb: PQCodebook, codes: np.ndarray) -> np.ndarray:
    codes = _check_code(cb, codes)
    return cb.centroids[np.arange(cb.m), codes].astype(np.float64).reshape(codes.shape[0], -1)


def adc_score(cb: PQCodebook, q: np.ndarray, code: np.ndarray) -> float:
    """Inner product of ``q`` with the document reconstructed from ``code``."""
    subs = _split(cb, q)
    code = _check_code(cb, code)
    picked = cb.centroids[np.arange(cb.m), code].astype(np.float64)
    return float((subs * picked).sum())


def adc_table(cb: PQCodebook, q: np.ndarray) -> np.ndarray:
    """(m, k) table of per-sub-space query/centroid inner products."""
    subs = _split(cb, q)
    return np.einsum("skj,sj->sk", cb.centroids.astype(np.float64), subs)


def batch_adc(cb: PQCodebook, q: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """ADC scores for many codes; builds the lookup table once.

    Accumulates sub-space by sub-space so scores are bit-reproducible across
    implementations that follow the same order.
    """
    codes = _check_code(cb, codes)
    if codes.ndim != 2:
        raise ConfigError(f"expected a 2-D code matrix, got shape {codes.shape}")
    table = adc_table(cb, q)
    out = np.zeros(codes.shape[0])
    for s in range(cb.m):
        out += table[s, codes[:, s]]
    return out


def save_codebook(cb: PQCodebook, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fileio.write_u32(fh, cb.m)
        fileio.write_u32(fh, cb.k)
        fileio.write_u32(fh, cb.dim)
        fileio.write_f32_array(fh, cb.centroids.reshape(-1))


def load_codebook(path: str) -> PQCodebook:
    with open(path, "rb") as fh:
        fileio.check_magic(fh, CODEBOOK_MAGIC, "codebook")
        m = fileio.read_u32(fh, "m")
        k = fileio.read_u32(fh, "k")
        dim = fileio.read_u32(fh, "dim")
        if m == 0 or dim % m != 0:
            raise fileio.FileFormatError(f"codebook header has m={m}, dim={dim}")
        cents = fileio.read_f32_array(fh, m * k * (dim // m), "centroids")
        return PQCodebook(cents.reshape(m, k, dim // m))


def save_codes(codes: np.ndarray, path: str) -> None:
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ConfigError(f"expected a 2-D code matrix, got shape {codes.shape}")
    if codes.size and codes.max() > 255:
        raise ConfigError("codes file requires k <= 256 (one byte per sub-space)")
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fileio.write_u64(fh, codes.shape[0])
        fileio.write_u32(fh, codes.shape[1])
        fh.write(codes.astype(np.uint8).tobytes())


def load_codes(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        fileio.check_magic(fh, CODES_MAGIC, "codes")
        n = fileio.read_u64(fh, "code count")
        m = fileio.read_u32(fh, "m")
        data = fileio.read_exact(fh, n * m, "code bytes")
        return np.frombuffer(data, dtype=np.uint8).reshape(n, m).copy()


class ProductQuantizer(BaseEstimator):
    """Estimator-style wrapper: fit learns the codebook, transform encodes.

    ``inverse_transform`` reconstructs, and ``adc`` scores a raw query vector
    against encoded rows.
    """

    def __init__(
        self,
        n_subspaces: int = 96,
        n_centroids: int = 256,
        seed: int = 0,
        max_iters: int = 25,
        tol: float = 1e-6,
    ):
        self.n_subspaces = n_subspaces
        self.n_centroids = n_centroids
        self.seed = seed
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        self.codebook_ = train_codebook(
            X, self.n_subspaces, self.n_centroids, self.seed, self.max_iters, self.tol
        )
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "codebook_")
        return encode_batch(self.codebook_, np.asarray(X, dtype=np.float64))

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)

    def inverse_transform(self, codes) -> np.ndarray:
        check_is_fitted(self, "codebook_")
        return reconstruct_batch(self.codebook_, codes)

    def adc(self, q, codes) -> np.ndarray:
        check_is_fitted(self, "codebook_")
        return batch_adc(self.codebook_, q, np.asarray(codes))
