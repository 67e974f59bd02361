"""Euclidean feature transforms: l2 normalization, random projection,
PCA and LDA, plus the streaming statistics that let PCA/LDA be refit at
task boundaries without ever storing raw samples.

Checkpoint layouts (little-endian):
    RandomProj  b"RPRJ" | u32 v=1 | u32 d | u32 m | u64 seed | u8 relu
                (the matrix is regenerated from the seed; numpy Generator
                bit streams are version-stable)
    PcaModel    b"PCAM" | u32 v=1 | u32 d | u32 k | mean f64 d |
                components f64 k*d | eigenvalues f64 k
    LdaModel    b"LDAM" | u32 v=1 | u32 d | u32 r | f64 ridge |
                mean f64 d | directions f64 r*d
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import (
    ConfigurationError,
    DataError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericalError,
)
from .prototypes import FeatureSpace


def l2_normalize(z: np.ndarray) -> np.ndarray:
    """Project onto the unit sphere; rejects the zero vector."""
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise DegenerateInputError("cannot l2-normalize the zero vector")
    return z / norm


@dataclass(frozen=True)
class RandomProj:
    """Fixed seeded random linear map, optionally followed by ReLU.

    Entries are N(0, 1/m) so the map preserves norms in expectation,
    keeping distance-based classification scale-comparable.
    """

    w: np.ndarray  # (m, d)
    seed: int
    relu: bool = True

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]


def init_random_projection(d: int, m: int = 4096, seed: int = 0, relu: bool = True) -> RandomProj:
    if d < 1 or m < 1:
        raise ConfigurationError("d and m must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, d))
    return RandomProj(w=w, seed=seed, relu=relu)


def apply_random_projection(proj: RandomProj, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (proj.in_dim,):
        raise DimensionError(f"input shape {z.shape}, projection expects ({proj.in_dim},)")
    out = proj.w @ z
    return np.maximum(out, 0.0) if proj.relu else out


# ---------------------------------------------------------------------------
# Streaming sufficient statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamStats:
    """Additive sufficient statistics: count, sum, second moment, and
    per-class counts/sums. Enough to derive mean, covariance, and the
    LDA scatter matrices without revisiting samples."""

    n: int
    sum: np.ndarray  # (d,)
    outer_sum: np.ndarray  # (d, d)
    per_class: dict[int, tuple[int, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def empty(cls, d: int) -> "StreamStats":
        return cls(n=0, sum=np.zeros(d), outer_sum=np.zeros((d, d)), per_class={})

    @property
    def dim(self) -> int:
        return self.sum.shape[0]

    def mean(self) -> np.ndarray:
        if self.n == 0:
            raise DataError("no samples accumulated")
        return self.sum / self.n

    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise DataError(f"covariance needs n >= 2, have {self.n}")
        mu = self.mean()
        return self.outer_sum / self.n - np.outer(mu, mu)


def update_stats(stats: StreamStats, embeddings, labels=None) -> StreamStats:
    """Accumulate a batch; order- and split-invariant up to fp rounding."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != stats.dim:
        raise DimensionError(f"batch dim {X.shape[1]}, stats expect {stats.dim}")
    per_class = {c: (cnt, s.copy()) for c, (cnt, s) in stats.per_class.items()}
    if labels is not None:
        y = np.asarray(labels, dtype=np.int64)
        if len(y) != len(X):
            raise DimensionError(f"{len(y)} labels for {len(X)} embeddings")
        for c in np.unique(y):
            rows = X[y == c]
            cnt, s = per_class.get(int(c), (0, np.zeros(stats.dim)))
            per_class[int(c)] = (cnt + len(rows), s + rows.sum(axis=0))
    return StreamStats(
        n=stats.n + len(X),
        sum=stats.sum + X.sum(axis=0),
        outer_sum=stats.outer_sum + X.T @ X,
        per_class=per_class,
    )


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows, eigenvalue-descending
    eigenvalues: np.ndarray  # (k,), non-negative


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude coordinate is positive
    (deterministic orientation across eigen-solvers and platforms)."""
    out = vectors.copy()
    for i, row in enumerate(out):
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            out[i] = -row
    return out


def pca_fit(stats: StreamStats, k: int) -> PcaModel:
    """Top-k principal axes of the streaming covariance."""
    d = stats.dim
    if k > d:
        raise ConfigurationError(f"k ({k}) exceeds dimension ({d})")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    cov = stats.covariance()  # raises DataError for n < 2
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = _fix_signs(eigvecs[:, order].T)
    eigenvalues = np.maximum(eigvals[order], 0.0)
    return PcaModel(mean=stats.mean(), components=components, eigenvalues=eigenvalues)


def pca_apply(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != model.mean.shape:
        raise DimensionError(f"input shape {z.shape}, model expects {model.mean.shape}")
    return model.components @ (z - model.mean)


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LdaModel:
    mean: np.ndarray  # (d,)
    directions: np.ndarray  # (r, d), r <= C-1
    ridge: float


def default_ridge(s_w: np.ndarray) -> float:
    # LDA is unstable under high intra-class variance; regularize by default
    return 1e-4 * float(np.trace(s_w)) / s_w.shape[0]


def lda_fit(stats: StreamStats, ridge: float | None = None) -> LdaModel:
    """Discriminant directions from streaming scatter statistics.

    Solves the generalized eigenproblem S_B v = lambda (S_W + ridge*I) v
    and keeps the top min(C-1, d) directions (B-orthonormal, so distances
    in the projected space are within-class whitened).
    """
    classes = sorted(stats.per_class)
    if len(classes) < 2:
        raise DataError(f"LDA needs >= 2 classes, have {len(classes)}")
    d = stats.dim
    mu = stats.mean()
    s_b = np.zeros((d, d))
    s_w = stats.outer_sum.copy()
    for c in classes:
        n_c, sum_c = stats.per_class[c]
        mu_c = sum_c / n_c
        diff = mu_c - mu
        s_b += n_c * np.outer(diff, diff)
        s_w -= n_c * np.outer(mu_c, mu_c)
    if ridge is None:
        ridge = default_ridge(s_w)
    r = min(len(classes) - 1, d)
    try:
        eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w + ridge * np.eye(d))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"within-class scatter is singular ({exc}); set ridge > 0"
        ) from exc
    order = np.argsort(eigvals)[::-1][:r]
    directions = _fix_signs(eigvecs[:, order].T)
    return LdaModel(mean=mu, directions=directions, ridge=float(ridge))


def lda_apply(model: LdaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != model.mean.shape:
        raise DimensionError(f"input shape {z.shape}, model expects {model.mean.shape}")
    return model.directions @ (z - model.mean)


# ---------------------------------------------------------------------------
# Feature spaces over these transforms
# ---------------------------------------------------------------------------

class NormalizedSpace(FeatureSpace):
    """l2-normalized embedding space (normalization before averaging)."""

    space_id = "normalized"

    def preprocess(self, z):
        return l2_normalize(z)


class RandomProjectionSpace(FeatureSpace):
    def __init__(self, proj: RandomProj, pre_normalize: bool = False):
        self.proj = proj
        self.pre_normalize = pre_normalize
        self.space_id = "random-projected+norm" if pre_normalize else "random-projected"

    def preprocess(self, z):
        return l2_normalize(z) if self.pre_normalize else np.asarray(z, dtype=np.float64)

    def project(self, u):
        return apply_random_projection(self.proj, u)


class PcaSpace(FeatureSpace):
    def __init__(self, model: PcaModel, pre_normalize: bool = False):
        self.model = model
        self.pre_normalize = pre_normalize
        self.space_id = "pca+norm" if pre_normalize else "pca"

    def preprocess(self, z):
        return l2_normalize(z) if self.pre_normalize else np.asarray(z, dtype=np.float64)

    def project(self, u):
        return pca_apply(self.model, u)


class LdaSpace(FeatureSpace):
    space_id = "lda"

    def __init__(self, model: LdaModel):
        self.model = model

    def project(self, u):
        return lda_apply(self.model, u)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_random_projection(proj: RandomProj, path):
    with open(Path(path), "wb") as fh:
        fh.write(b"RPRJ")
        fh.write(struct.pack("<IIIQB", 1, proj.in_dim, proj.out_dim, proj.seed, int(proj.relu)))


def load_random_projection(path) -> RandomProj:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != b"RPRJ":
            raise FormatError("bad random-projection checkpoint magic")
        version, d, m, seed, relu = struct.unpack("<IIIQB", fh.read(21))
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}")
    return init_random_projection(d, m, seed=seed, relu=bool(relu))


def save_pca(model: PcaModel, path):
    k, d = model.components.shape
    with open(Path(path), "wb") as fh:
        fh.write(b"PCAM")
        fh.write(struct.pack("<III", 1, d, k))
        for arr in (model.mean, model.components, model.eigenvalues):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != b"PCAM":
            raise FormatError("bad PCA checkpoint magic")
        version, d, k = struct.unpack("<III", fh.read(12))
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}")
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        components = np.frombuffer(fh.read(8 * k * d), dtype="<f8").reshape(k, d).copy()
        eigenvalues = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def save_lda(model: LdaModel, path):
    r, d = model.directions.shape
    with open(Path(path), "wb") as fh:
        fh.write(b"LDAM")
        fh.write(struct.pack("<IIId", 1, d, r, model.ridge))
        for arr in (model.mean, model.directions):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_lda(path) -> LdaModel:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != b"LDAM":
            raise FormatError("bad LDA checkpoint magic")
        version, d, r, ridge = struct.unpack("<IIId", fh.read(20))
        if version != 1:
            raise FormatError(f"unsupported checkpoint version {version}")
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        directions = np.frombuffer(fh.read(8 * r * d), dtype="<f8").reshape(r, d).copy()
    return LdaModel(mean=mean, directions=directions, ridge=ridge)
