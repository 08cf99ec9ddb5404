"""Synthetic clustered datasets that stand in for real benchmark orbits.

Every cluster has a non-negative center orbit ``profile[c] * pattern``.  Items
are transformed copies of their center: a cyclic shift of the rotation samples
and a cyclic shift of the translation grid, followed by additive noise that is
partly per element and partly per channel (the per-channel part survives
pooling).  With ``noise=0`` every item pools to exactly the same descriptor
as the rest of its cluster.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .orbit_store import GroundTruth, OrbitTensor


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Named, independent random stream derived from one top-level seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass(frozen=True)
class SynthSpec:
    n_clusters: int = 10
    items_per_cluster: int = 4
    shape: tuple[int, int, int, int, int] | None = (6, 3, 64, 3, 3)
    dim: int | None = None
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.items_per_cluster < 1:
            raise ValueError("n_clusters and items_per_cluster must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if (self.shape is None) == (self.dim is None):
            raise ValueError("give exactly one of shape (orbit mode) or dim (descriptor mode)")
        if self.shape is not None and (len(self.shape) != 5 or min(self.shape) < 1):
            raise ValueError(f"bad orbit shape {self.shape}")
        if self.dim is not None and self.dim < 1:
            raise ValueError("dim must be positive")

    @property
    def n_items(self) -> int:
        return self.n_clusters * self.items_per_cluster

    def item_id(self, cluster: int, item: int) -> str:
        return f"c{cluster:05d}_{item:02d}"


def cluster_ground_truth(spec: SynthSpec) -> GroundTruth:
    """Every item is a query; its relevant set is its whole cluster, itself included."""
    queries = []
    for k in range(spec.n_clusters):
        members = frozenset(spec.item_id(k, i) for i in range(spec.items_per_cluster))
        for i in range(spec.items_per_cluster):
            queries.append((spec.item_id(k, i), members))
    return GroundTruth(queries)


def _profiles(spec: SynthSpec, channels: int, rng: np.random.Generator) -> np.ndarray:
    # sparse-ish non-negative channel profiles, one per cluster
    return rng.gamma(0.5, 1.0, size=(spec.n_clusters, channels))


def synth_orbits(spec: SynthSpec) -> tuple[list[OrbitTensor], GroundTruth]:
    if spec.shape is None:
        raise ValueError("SynthSpec is in descriptor mode")
    n_rot, n_scale, C, H, W = spec.shape
    rng_center = derive_rng(spec.seed, "synth.centers")
    rng_item = derive_rng(spec.seed, "synth.items")
    profiles = _profiles(spec, C, rng_center)
    records = []
    for k in range(spec.n_clusters):
        pattern = rng_center.gamma(2.0, 0.5, size=spec.shape)
        center = profiles[k][None, None, :, None, None] * pattern
        for i in range(spec.items_per_cluster):
            x = np.roll(center, int(rng_item.integers(n_rot)), axis=0)
            x = np.roll(x, (int(rng_item.integers(H)), int(rng_item.integers(W))), axis=(3, 4))
            if spec.noise > 0:
                per_channel = rng_item.standard_normal((1, 1, C, 1, 1))
                per_elem = rng_item.standard_normal(spec.shape)
                x = np.maximum(x + spec.noise * (per_channel + per_elem), 0.0)
            records.append(OrbitTensor(spec.item_id(k, i), x.astype(np.float32)))
    return records, cluster_ground_truth(spec)


def synth_descriptors(spec: SynthSpec) -> tuple[np.ndarray, list[str], GroundTruth]:
    """Clustered non-negative descriptors (rows), ids and ground truth."""
    if spec.dim is None:
        raise ValueError("SynthSpec is in orbit mode")
    rng_center = derive_rng(spec.seed, "synth.centers")
    rng_item = derive_rng(spec.seed, "synth.items")
    profiles = _profiles(spec, spec.dim, rng_center)
    rows, ids = [], []
    for k in range(spec.n_clusters):
        for i in range(spec.items_per_cluster):
            x = profiles[k] + spec.noise * rng_item.standard_normal(spec.dim)
            rows.append(np.maximum(x, 0.0))
            ids.append(spec.item_id(k, i))
    return np.asarray(rows), ids, cluster_ground_truth(spec)
