"""Exhaustive L2 / Hamming ranking and retrieval metrics.

AP is non-interpolated: the mean, over relevant items present in the ranking,
of the precision at each relevant hit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimError, MetricError
from .postproc import BinaryHash, code_stride, unpack_bits


def hamming(a: BinaryHash, b: BinaryHash) -> int:
    if a.n_bits != b.n_bits:
        raise DimError(f"hash lengths differ: {a.n_bits} vs {b.n_bits}")
    return int(np.bitwise_count(np.bitwise_xor(a.bits, b.bits)).sum())


def l2(a, b) -> float:
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimError(f"descriptor dims differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


class _Table:
    ids: np.ndarray

    def _init_ids(self, ids):
        self.ids = np.asarray(list(ids), dtype=str)
        if len(set(self.ids.tolist())) != len(self.ids):
            raise DimError("duplicate ids in database")
        self._by_id = np.argsort(self.ids, kind="stable")
        self._pos = {k: i for i, k in enumerate(self.ids.tolist())}

    def __len__(self):
        return len(self.ids)

    def position(self, image_id: str) -> int:
        return self._pos[image_id]


class HashIndex(_Table):
    """Database of packed codes, one fixed-stride row per item."""

    def __init__(self, ids: Sequence[str], codes: np.ndarray, n_bits: int):
        self._init_ids(ids)
        self.codes = np.ascontiguousarray(codes, dtype=np.uint8)
        self.n_bits = int(n_bits)
        stride = code_stride(self.n_bits)
        if self.codes.shape != (len(self.ids), stride):
            raise DimError(f"codes shape {self.codes.shape} != ({len(self.ids)}, {stride})")
        pad = stride * 8 - self.n_bits
        if pad and np.any(self.codes[:, -1] >> (8 - pad)):
            raise DimError("non-zero padding bits in codes")
        # scan 64 bits at a time when the stride allows it
        self._words = self.codes.view(np.uint64) if stride % 8 == 0 else None

    def scan(self, query: np.ndarray) -> np.ndarray:
        """Hamming distance from one packed query code to every row."""
        q = np.ascontiguousarray(query, dtype=np.uint8).reshape(-1)
        if q.shape[0] != self.codes.shape[1]:
            raise DimError(f"query has {q.shape[0]} bytes, index rows have {self.codes.shape[1]}")
        if self._words is not None:
            x = np.bitwise_xor(self._words, q.view(np.uint64))
        else:
            x = np.bitwise_xor(self.codes, q)
        return np.bitwise_count(x).sum(axis=1, dtype=np.int64)


class DescriptorTable(_Table):
    def __init__(self, ids: Sequence[str], values: np.ndarray):
        self._init_ids(ids)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise DimError(f"values shape {self.values.shape} does not match {len(self.ids)} ids")

    def scan(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.values.shape[1]:
            raise DimError(f"query dim {q.shape[0]} != database dim {self.values.shape[1]}")
        return np.sqrt(np.sum((self.values - q) ** 2, axis=1))


@dataclass
class RankedList:
    query_id: str
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.ids)

    def top(self, r: int) -> list[str]:
        return self.ids[:r].tolist()


def rank(query_id: str, query, db: HashIndex | DescriptorTable, include_self: bool = False) -> RankedList:
    """Full ranking of ``db`` by ascending distance, ties broken by ascending id.

    The query's own id is dropped unless ``include_self``.
    """
    if isinstance(query, BinaryHash):
        if not isinstance(db, HashIndex) or query.n_bits != db.n_bits:
            raise DimError("hash query needs a HashIndex with the same code length")
        query = query.bits
    dist = db.scan(getattr(query, "values", query))
    order = db._by_id[np.argsort(dist[db._by_id], kind="stable")]
    if not include_self:
        order = order[db.ids[order] != query_id]
    return RankedList(query_id, db.ids[order], dist[order])


def _relevance(r: RankedList, relevant: Iterable[str]) -> tuple[np.ndarray, int]:
    relevant = set(relevant)
    if not relevant:
        raise MetricError(f"query {r.query_id!r} has an empty relevant set")
    return np.isin(r.ids, list(relevant)), len(relevant)


def average_precision(r: RankedList, relevant: Iterable[str]) -> float:
    rel, _ = _relevance(r, relevant)
    n_hits = int(rel.sum())
    if n_hits == 0:
        return 0.0
    # accumulate in ranking order so the value is reproducible term by term
    total = 0.0
    for k, pos in enumerate(np.flatnonzero(rel).tolist(), start=1):
        total += k / (pos + 1)
    return total / n_hits


def recall_at_r(r: RankedList, relevant: Iterable[str], R: int) -> float:
    if R < 1:
        raise MetricError("R must be >= 1")
    rel, n_rel = _relevance(r, relevant)
    return float(rel[:R].sum() / n_rel)


@dataclass
class BitStats:
    means: np.ndarray

    @property
    def spread(self) -> float:
        """Standard deviation of the per-bit means across bits."""
        return float(np.std(self.means))

    def to_csv(self) -> str:
        lines = ["bit,mean"] + [f"{j},{m:.6f}" for j, m in enumerate(self.means)]
        return "\n".join(lines) + "\n"


def bit_stats(codes: np.ndarray | Sequence[BinaryHash], n_bits: int | None = None) -> BitStats:
    if not isinstance(codes, np.ndarray):
        hashes = list(codes)
        if not hashes:
            raise DimError("bit_stats needs at least one hash")
        if len({h.n_bits for h in hashes}) != 1:
            raise DimError("hashes have different lengths")
        n_bits = hashes[0].n_bits
        codes = np.stack([h.bits for h in hashes])
    if codes.shape[0] == 0:
        raise DimError("bit_stats needs at least one hash")
    return BitStats(unpack_bits(codes, n_bits).mean(axis=0))


@dataclass
class EvalReport:
    metric: str
    include_self: bool
    ap: dict[str, float]
    recall: dict[int, float]
    per_query_recall: dict[str, dict[int, float]] = field(default_factory=dict)
    bits: BitStats | None = None

    @property
    def map(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    @property
    def ukb_score(self) -> float | None:
        """4 x Recall@4 (meaningful when the query's own image counts as relevant)."""
        return 4.0 * self.recall[4] if 4 in self.recall else None

    def summary(self) -> dict[str, object]:
        out: dict[str, object] = {
            "metric": self.metric,
            "n_queries": len(self.ap),
            "include_self": int(self.include_self),
            "ap_definition": "non-interpolated; denominator = relevant items present in ranking",
            "mAP": f"{self.map:.6f}",
        }
        for R, v in sorted(self.recall.items()):
            out[f"recall@{R}"] = f"{v:.6f}"
        if self.ukb_score is not None:
            out["ukb_score"] = f"{self.ukb_score:.6f}"
        if self.bits is not None:
            out["bit_mean_avg"] = f"{float(self.bits.means.mean()):.6f}"
            out["bit_mean_std"] = f"{self.bits.spread:.6f}"
        return out

    def to_tsv(self) -> str:
        Rs = sorted(self.recall)
        lines = ["query\tAP" + "".join(f"\trecall@{R}" for R in Rs)]
        for q, ap in self.ap.items():
            rec = self.per_query_recall.get(q, {})
            lines.append(f"{q}\t{ap:.6f}" + "".join(f"\t{rec.get(R, float('nan')):.6f}" for R in Rs))
        lines.append(f"# mAP\t{self.map:.6f}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.summary().items())


def evaluate(
    queries: Mapping[str, object],
    db: HashIndex | DescriptorTable,
    ground_truth,
    include_self: bool = False,
    recall_at: Sequence[int] = (1, 4, 10),
) -> EvalReport:
    """Rank ``db`` for every ground-truth query found in ``queries``."""
    ap, per_query = {}, {}
    for qid, relevant in ground_truth:
        if qid not in queries:
            raise MetricError(f"query {qid!r} has no descriptor/hash")
        ranked = rank(qid, queries[qid], db, include_self=include_self)
        ap[qid] = average_precision(ranked, relevant)
        per_query[qid] = {R: recall_at_r(ranked, relevant, R) for R in recall_at}
    recall = {R: float(np.mean([v[R] for v in per_query.values()])) for R in recall_at}
    metric = "hamming" if isinstance(db, HashIndex) else "l2"
    bits = bit_stats(db.codes, db.n_bits) if isinstance(db, HashIndex) else None
    return EvalReport(metric, include_self, ap, recall, per_query, bits)


def ukb_score(report: EvalReport) -> float:
    if 4 not in report.recall:
        raise MetricError("report has no recall@4")
    return 4.0 * report.recall[4]
