"""Descriptor post-processing: L2 normalization, PCA whitening, thresholding to bits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimError


def l2_normalize(d: np.ndarray) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit Euclidean norm.

    All-zero rows are returned unchanged.
    """
    d = np.asarray(d, dtype=np.float64)
    # pre-scale by the largest magnitude so tiny vectors do not underflow
    peak = np.max(np.abs(d), axis=-1, keepdims=True)
    d = np.divide(d, peak, out=np.zeros_like(d), where=peak > 0)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    return np.divide(d, norm, out=np.zeros_like(d), where=norm > 0)


@dataclass
class PcaModel:
    mean: np.ndarray          # (in_dim,)
    projection: np.ndarray    # (out_dim, in_dim), whitening scale folded in
    eigenvalues: np.ndarray   # (out_dim,), descending
    epsilon: float = 1e-5
    whiten: bool = True

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def out_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def components(self) -> np.ndarray:
        """Unit-norm principal directions (rows), without the whitening scale."""
        if not self.whiten:
            return self.projection
        return self.projection * np.sqrt(self.eigenvalues + self.epsilon)[:, None]


def _principal_axes(X: np.ndarray, out_dim: int):
    n, d = X.shape
    if n < 2:
        raise DimError(f"need at least 2 samples, got {n}")
    if not 1 <= out_dim <= min(n - 1, d):
        raise DimError(f"out_dim={out_dim} must lie in [1, min(N-1, D)] = [1, {min(n - 1, d)}]")
    if not np.all(np.isfinite(X)):
        raise DimError("descriptors contain non-finite values")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DegenerateData("all descriptors are identical")
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    # descending eigenvalue, ties by lowest eigh index
    order = np.lexsort((np.arange(d), -evals))[:out_dim]
    evals = np.clip(evals[order], 0.0, None)
    vecs = evecs[:, order].T
    # fix the sign so the largest-magnitude entry of each direction is positive
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(out_dim), pivot])
    vecs = vecs * np.where(signs == 0, 1.0, signs)[:, None]
    return mean, vecs, evals


def fit_pca(descs: np.ndarray, out_dim: int) -> PcaModel:
    """Plain PCA projection (no whitening)."""
    X = np.asarray(descs, dtype=np.float64)
    mean, vecs, evals = _principal_axes(X, out_dim)
    return PcaModel(mean, vecs, evals, epsilon=0.0, whiten=False)


def fit_pca_whitening(descs: np.ndarray, out_dim: int, epsilon: float = 1e-5) -> PcaModel:
    X = np.asarray(descs, dtype=np.float64)
    mean, vecs, evals = _principal_axes(X, out_dim)
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    scale = evals + epsilon
    if np.any(scale <= evals[0] * 1e-12):
        raise DegenerateData(f"out_dim={out_dim} exceeds the numerical rank of the data; raise epsilon")
    return PcaModel(mean, vecs / np.sqrt(scale)[:, None], evals, epsilon, whiten=True)


def apply_pca_whitening(model: PcaModel, d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != model.in_dim:
        raise DimError(f"descriptor dim {d.shape[-1]} != model input dim {model.in_dim}")
    return (d - model.mean) @ model.projection.T


apply_pca = apply_pca_whitening


@dataclass
class BinaryHash:
    """Packed bits: bit j lives in byte j // 8 at position j % 8 (LSB first)."""

    bits: np.ndarray
    n_bits: int
    image_id: str = ""

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.shape != (code_stride(self.n_bits),):
            raise DimError(f"{self.n_bits} bits need {code_stride(self.n_bits)} bytes, got {self.bits.shape}")

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.n_bits:
            raise IndexError(j)
        return int(self.bits[j >> 3] >> (j & 7) & 1)

    def unpack(self) -> np.ndarray:
        return unpack_bits(self.bits, self.n_bits)

    @classmethod
    def from_bools(cls, bools, image_id: str = "") -> "BinaryHash":
        bools = np.asarray(bools, dtype=bool)
        return cls(pack_bits(bools), bools.shape[-1], image_id)


def code_stride(n_bits: int) -> int:
    return (n_bits + 7) // 8


def pack_bits(bools: np.ndarray) -> np.ndarray:
    """Pack the last axis of a boolean array LSB-first; padding bits are zero."""
    return np.packbits(np.asarray(bools, dtype=bool), axis=-1, bitorder="little")


def unpack_bits(codes: np.ndarray, n_bits: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint8)
    return np.unpackbits(codes, axis=-1, count=n_bits, bitorder="little").astype(bool)


def binarize_threshold(d: np.ndarray, threshold) -> np.ndarray:
    """Bits ``d_j > threshold_j`` (packed), for one vector or each row of a matrix.

    ``threshold`` may be a scalar or a per-dimension vector.
    """
    d = np.asarray(d, dtype=np.float64)
    return pack_bits(d > np.asarray(threshold, dtype=np.float64))


@dataclass
class ThresholdModel:
    """Direct binarization of descriptors against per-dimension thresholds.

    ``mode`` is ``"median"`` (thresholds fitted on training data) or ``"fixed"``.
    """

    thresholds: np.ndarray
    mode: str = "median"

    @property
    def n_bits(self) -> int:
        return self.thresholds.shape[0]

    def hash(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if d.shape[-1] != self.n_bits:
            raise DimError(f"descriptor dim {d.shape[-1]} != {self.n_bits}")
        return binarize_threshold(d, self.thresholds)


def fit_median_threshold(descs: np.ndarray) -> ThresholdModel:
    X = np.asarray(descs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimError("need a non-empty N x D matrix")
    return ThresholdModel(np.median(X, axis=0), "median")


def fixed_threshold(dim: int, value: float) -> ThresholdModel:
    return ThresholdModel(np.full(dim, float(value)), "fixed")
