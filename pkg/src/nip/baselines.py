"""Unsupervised hashing baselines: random-projection LSH, PCAHash and ITQ.

These are the textbook formulations, used as comparison points for the RBM
hasher rather than reproductions of any particular third-party code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimError
from .postproc import PcaModel, fit_pca, pack_bits


def _check_dim(d: np.ndarray, dim: int) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != dim:
        raise DimError(f"descriptor dim {d.shape[-1]} != model input dim {dim}")
    return d


@dataclass
class LshModel:
    projections: np.ndarray  # (n_bits, D)
    seed: int

    @property
    def n_bits(self) -> int:
        return self.projections.shape[0]

    @property
    def in_dim(self) -> int:
        return self.projections.shape[1]

    def hash(self, d):
        return lsh_hash(self, d)


def lsh_fit(dim: int, n_bits: int, seed: int) -> LshModel:
    if n_bits < 1 or dim < 1:
        raise DimError("n_bits and dim must be positive")
    rng = np.random.default_rng(seed)
    return LshModel(rng.standard_normal((n_bits, dim)), seed)


def lsh_hash(m: LshModel, d) -> np.ndarray:
    d = _check_dim(d, m.in_dim)
    return pack_bits(d @ m.projections.T > 0)


@dataclass
class PcaHashModel:
    pca: PcaModel

    @property
    def n_bits(self) -> int:
        return self.pca.out_dim

    @property
    def in_dim(self) -> int:
        return self.pca.in_dim

    def hash(self, d):
        return pcahash_hash(self.pca, d)


def pcahash_fit(descs: np.ndarray, n_bits: int) -> PcaModel:
    return fit_pca(descs, n_bits)


def pcahash_hash(m: PcaModel, d) -> np.ndarray:
    d = _check_dim(d, m.in_dim)
    return pack_bits((d - m.mean) @ m.projection.T > 0)


@dataclass
class ItqModel:
    pca: PcaModel
    rotation: np.ndarray  # (n_bits, n_bits), orthogonal
    iterations: int
    losses: list[float] = field(default_factory=list)

    @property
    def n_bits(self) -> int:
        return self.rotation.shape[0]

    @property
    def in_dim(self) -> int:
        return self.pca.in_dim

    def hash(self, d):
        return itq_hash(self, d)


def _random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def quantization_loss(V: np.ndarray, R: np.ndarray) -> float:
    VR = V @ R
    B = np.where(VR > 0, 1.0, -1.0)
    return float(np.sum((B - VR) ** 2))


def itq_fit(descs: np.ndarray, n_bits: int, iterations: int = 50, seed: int = 0) -> ItqModel:
    """Alternate B = sign(V R) and the orthogonal Procrustes solution for R."""
    if iterations < 1:
        raise ValueError("ITQ needs at least one iteration")
    X = np.asarray(descs, dtype=np.float64)
    pca = fit_pca(X, n_bits)
    V = (X - pca.mean) @ pca.projection.T
    R = _random_rotation(n_bits, np.random.default_rng(seed))
    losses = [quantization_loss(V, R)]
    for _ in range(iterations):
        B = np.where(V @ R > 0, 1.0, -1.0)
        U, _, Wt = np.linalg.svd(V.T @ B)
        R = U @ Wt
        losses.append(quantization_loss(V, R))
    return ItqModel(pca, R, iterations, losses)


def itq_hash(m: ItqModel, d) -> np.ndarray:
    d = _check_dim(d, m.in_dim)
    return pack_bits(((d - m.pca.mean) @ m.pca.projection.T) @ m.rotation > 0)
