"""State encoders and the similarity metric used for retrieval.

Three encoder families share one interface: raw row-major flattening,
PCA projection, and lookup of externally produced latents keyed by
(trajectory_id, frame_id). Similarity is cosine distance.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatchError, EncodingError, MissingLatentError
from . import formats

NORM_FLOOR = 1e-12


def cosine_distance(a, b) -> float:
    """1 - <a, b> / (|a| |b|), in [0, 2]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"vectors disagree in dimension: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= NORM_FLOOR:
        raise EncodingError("first argument has (near-)zero norm")
    if nb <= NORM_FLOOR:
        raise EncodingError("second argument has (near-)zero norm")
    return float(1.0 - np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class PcaModel:
    """Centred principal components of flattened vorticity fields.

    components rows are orthonormal eigendirections of the sample
    covariance, ordered by nonincreasing explained_variance. When the
    sample covariance is rank deficient, trailing rows are an orthonormal
    completion with explained variance pinned to zero and the model is
    flagged.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float
    rank_deficient: bool = False

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def project(self, flat_rows):
        return (np.asarray(flat_rows, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, coords):
        return np.asarray(coords, dtype=np.float64) @ self.components + self.mean


def _sample_matrix(samples):
    arr = np.asarray(samples)
    if arr.ndim == 3:
        return arr.reshape(arr.shape[0], -1)
    if arr.ndim == 2:
        return arr
    raise ValueError("samples must be (n, nx, ny) fields or (n, p) rows")


def fit_pca(samples, n_components: int) -> PcaModel:
    """Exact PCA via eigendecomposition of the sample covariance.

    Requires more samples than components. Covariance is accumulated in
    float64 chunks so large frame stacks can stay float32 in memory.
    """
    rows = _sample_matrix(samples)
    n, p = rows.shape
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n <= n_components:
        raise EncodingError(
            f"need more samples than components: {n} <= {n_components}")
    if n_components > p:
        raise EncodingError(
            f"n_components={n_components} exceeds field dimension {p}")

    mean = np.zeros(p)
    chunk = 2048
    for lo in range(0, n, chunk):
        mean += np.sum(rows[lo:lo + chunk].astype(np.float64), axis=0)
    mean /= n

    cov = np.zeros((p, p))
    for lo in range(0, n, chunk):
        block = rows[lo:lo + chunk].astype(np.float64) - mean
        cov += block.T @ block
    cov /= n - 1

    eigenvalues, eigenvectors = sla.eigh(
        cov, subset_by_index=(p - n_components, p - 1))
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order].T  # rows are components

    total = float(np.trace(cov))
    tol = max(total, 1.0) * 1e-12
    deficient = bool(np.any(eigenvalues <= tol))
    eigenvalues = np.where(eigenvalues <= tol, 0.0, eigenvalues)

    return PcaModel(mean=mean, components=np.ascontiguousarray(eigenvectors),
                    explained_variance=eigenvalues, total_variance=total,
                    rank_deficient=deficient)


@dataclass(frozen=True)
class LatentTable:
    """In-memory view of an LTN1 file."""

    vectors: dict
    dim: int

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, key):
        return tuple(key) in self.vectors

    def __getitem__(self, key):
        key = (int(key[0]), int(key[1]))
        try:
            return self.vectors[key]
        except KeyError:
            raise MissingLatentError(key) from None


def load_latents(path) -> LatentTable:
    """Load an LTN1 latent file; validation lives in the format layer."""
    vectors, dim = formats.read_latents(path)
    return LatentTable(vectors=vectors, dim=dim)


@dataclass(frozen=True)
class EncoderSpec:
    """Which encoder to apply: raw | pca | external."""

    kind: str
    pca_model: PcaModel | None = None
    latent_source: object = None  # path to an LTN1 file, or a LatentTable

    def __post_init__(self):
        if self.kind not in ("raw", "pca", "external"):
            raise EncodingError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "pca" and self.pca_model is None:
            raise EncodingError("kind='pca' requires pca_model")
        if self.kind == "external" and self.latent_source is None:
            raise EncodingError("kind='external' requires latent_source")

    def latent_table(self) -> LatentTable:
        if isinstance(self.latent_source, LatentTable):
            return self.latent_source
        table = load_latents(self.latent_source)
        object.__setattr__(self, "latent_source", table)
        return table

    def dimension(self, grid_points: int) -> int:
        if self.kind == "raw":
            return grid_points
        if self.kind == "pca":
            return self.pca_model.n_components
        return self.latent_table().dim


def encode(spec: EncoderSpec, omega, frame_key=None):
    """Map one vorticity field to its latent vector.

    frame_key (trajectory_id, frame_id) is required for external lookup
    and ignored otherwise.
    """
    if spec.kind == "raw":
        return np.asarray(omega, dtype=np.float64).ravel()
    if spec.kind == "pca":
        model = spec.pca_model
        flat = np.asarray(omega, dtype=np.float64).ravel()
        if flat.size != model.mean.size:
            raise DimensionMismatchError(
                f"field has {flat.size} entries, PCA expects {model.mean.size}")
        return model.components @ (flat - model.mean)
    if frame_key is None:
        raise EncodingError("external encoding requires a frame_key")
    return np.asarray(spec.latent_table()[frame_key], dtype=np.float64)


def encode_frames(spec: EncoderSpec, frames, keys=None):
    """Vectorised encode over a (n, nx, ny) frame stack; returns (n, D)."""
    frames = np.asarray(frames)
    n = frames.shape[0]
    flat = frames.reshape(n, -1)
    if spec.kind == "raw":
        return flat.astype(np.float64)
    if spec.kind == "pca":
        return spec.pca_model.project(flat)
    if keys is None:
        raise EncodingError("external encoding requires keys")
    table = spec.latent_table()
    return np.stack([np.asarray(table[k], dtype=np.float64) for k in keys])
