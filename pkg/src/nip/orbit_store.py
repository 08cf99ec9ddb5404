"""On-disk container for per-image feature-map orbits, plus the ground-truth sidecar.

An orbit is the stack of CNN feature maps computed for every sampled
transformation of one image, indexed ``(rotation, scale, channel, row, col)``.
Translations are not sampled explicitly: they live inside each feature map.

File layout (little-endian)::

    "NIPO" | u32 version=1 | u64 n_images | u32 n_rot, n_scale, C, H, W | u8 dtype_code
    metadata block | id index | n_images row-major float32 payloads
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import container
from .errors import CorruptStore, NotFound, ParseError, ShapeMismatch, ValidationError

MAGIC = b"NIPO"
VERSION = 1
DTYPE_FLOAT32_LE = 0
AXES = ("rotation", "scale", "channel", "row", "col")

_HEADER = struct.Struct("<4sIQ5IB")
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class OrbitTensor:
    image_id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 5:
            raise ShapeMismatch(
                f"{self.image_id}: orbit must be 5-D {AXES}, got shape {self.data.shape}"
            )
        if min(self.data.shape) < 1:
            raise ShapeMismatch(f"{self.image_id}: empty axis in shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def check(self) -> None:
        """Raise ValidationError unless all values are finite and non-negative."""
        bad = np.flatnonzero(~np.isfinite(self.data))
        if bad.size:
            raise ValidationError(f"{self.image_id}: non-finite value at flat index {bad[0]}")
        neg = np.flatnonzero(self.data < 0)
        if neg.size:
            raise ValidationError(f"{self.image_id}: negative value at flat index {neg[0]}")


@dataclass(frozen=True)
class StoreHeader:
    n_images: int
    n_rot: int
    n_scale: int
    channels: int
    height: int
    width: int
    dtype_code: int = DTYPE_FLOAT32_LE
    magic: bytes = MAGIC
    version: int = VERSION

    SIZE = _HEADER.size

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        return (self.n_rot, self.n_scale, self.channels, self.height, self.width)

    @property
    def record_nbytes(self) -> int:
        return int(np.prod(self.shape)) * _PAYLOAD_DTYPE.itemsize

    def pack(self) -> bytes:
        return _HEADER.pack(self.magic, self.version, self.n_images, *self.shape, self.dtype_code)

    @classmethod
    def unpack(cls, raw: bytes) -> "StoreHeader":
        if len(raw) != _HEADER.size:
            raise CorruptStore("truncated store header")
        magic, version, n, r, s, c, h, w, dtype_code = _HEADER.unpack(raw)
        container.check_magic(magic, MAGIC, version, VERSION)
        if dtype_code != DTYPE_FLOAT32_LE:
            raise CorruptStore(f"unsupported dtype code {dtype_code}")
        return cls(n, r, s, c, h, w, dtype_code, magic, version)

    @classmethod
    def for_records(cls, n_images: int, shape: Sequence[int]) -> "StoreHeader":
        return cls(n_images, *(int(x) for x in shape))


def write_store(records: Sequence[OrbitTensor], path, metadata: dict | None = None) -> None:
    """Write ``records`` to ``path``.

    The file is written to a temporary sibling and renamed into place, so a
    failed write never leaves a partial store behind.  Output bytes depend only
    on the records and metadata.
    """
    records = list(records)
    if not records:
        raise ValidationError("cannot write an empty orbit store")
    shape = records[0].shape
    for rec in records:
        if rec.shape != shape:
            raise ShapeMismatch(f"{rec.image_id}: shape {rec.shape} differs from {shape}")
        rec.check()

    header = StoreHeader.for_records(len(records), shape)
    meta = container.pack_metadata(metadata)
    ids = [rec.image_id for rec in records]
    start = header.SIZE + len(meta) + container.index_size(ids)
    offsets = [start + k * header.record_nbytes for k in range(len(records))]
    index = container.pack_index(ids, offsets)

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(header.pack())
            fh.write(meta)
            fh.write(index)
            for rec in records:
                fh.write(np.ascontiguousarray(rec.data, dtype=_PAYLOAD_DTYPE).tobytes())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


class OrbitStore:
    """Read-only view of an orbit store file.

    Opening parses the header and id index only; payloads are read on demand,
    so concurrent readers can share one instance.
    """

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            self.header = StoreHeader.unpack(container.read_exact(fh, StoreHeader.SIZE, "header"))
            self.metadata = container.read_metadata(fh)
            self.index = container.read_index(fh)
            self.payload_start = fh.tell()
        self.file_size = self.path.stat().st_size
        self._offsets = dict(self.index)
        # payload (write) order
        self.ids = [i for i, _ in sorted(self.index, key=lambda e: e[1])]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.header.shape

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._offsets

    def __iter__(self) -> Iterator[OrbitTensor]:
        for image_id in self.ids:
            yield self.read(image_id)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def read(self, image_id: str) -> OrbitTensor:
        try:
            offset = self._offsets[image_id]
        except KeyError:
            raise NotFound(f"image id {image_id!r} not in store {self.path}") from None
        return OrbitTensor(image_id, self._read_payload(image_id, offset))

    def _read_payload(self, image_id: str, offset: int) -> np.ndarray:
        count = int(np.prod(self.shape))
        with open(self.path, "rb") as fh:
            fh.seek(offset)
            raw = fh.read(count * _PAYLOAD_DTYPE.itemsize)
        if len(raw) != count * _PAYLOAD_DTYPE.itemsize:
            raise CorruptStore(
                f"{image_id}: payload has {len(raw)} bytes, expected {count * _PAYLOAD_DTYPE.itemsize}"
            )
        return np.frombuffer(raw, dtype=_PAYLOAD_DTYPE).reshape(self.shape).astype(np.float32)


def open_store(path) -> OrbitStore:
    return OrbitStore(path)


def read_orbit(store: OrbitStore, image_id: str) -> OrbitTensor:
    return store.read(image_id)


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str
    image_id: str | None = None
    flat_index: int | None = None


@dataclass
class ValidationReport:
    path: str
    n_records: int = 0
    findings: list[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.findings

    def lines(self) -> list[str]:
        out = [f"store\t{self.path}\trecords={self.n_records}\t{'PASS' if self.passed else 'FAIL'}"]
        for f in self.findings:
            loc = "" if f.flat_index is None else f"\tflat_index={f.flat_index}"
            out.append(f"{f.kind}\t{f.image_id or '-'}\t{f.detail}{loc}")
        return out


def validate_store(store) -> ValidationReport:
    """Check header, index and every record; never raises for bad content."""
    path = store.path if isinstance(store, OrbitStore) else Path(store)
    report = ValidationReport(str(path))
    if not isinstance(store, OrbitStore):
        try:
            store = OrbitStore(path)
        except (CorruptStore, ValidationError) as exc:
            report.findings.append(Finding("header", str(exc)))
            return report
    hdr = store.header
    report.n_records = len(store)

    if hdr.n_images != len(store.index):
        report.findings.append(
            Finding("header", f"header n_images={hdr.n_images} but index has {len(store.index)} entries")
        )
    expected = store.payload_start + len(store.index) * hdr.record_nbytes
    if store.file_size != expected:
        report.findings.append(
            Finding("size", f"file has {store.file_size} bytes, expected {expected}")
        )
    valid_offsets = {store.payload_start + k * hdr.record_nbytes for k in range(len(store.index))}
    for image_id, offset in store.index:
        if offset not in valid_offsets:
            report.findings.append(Finding("index", f"offset {offset} is not a record boundary", image_id))
            continue
        try:
            rec = store.read(image_id)
        except CorruptStore as exc:
            report.findings.append(Finding("payload", str(exc), image_id))
            continue
        data = rec.data.ravel()
        bad = np.flatnonzero(~np.isfinite(data))
        if bad.size:
            report.findings.append(
                Finding("finite", f"{bad.size} non-finite value(s)", image_id, int(bad[0]))
            )
        neg = np.flatnonzero(data < 0)
        if neg.size:
            report.findings.append(
                Finding("negative", f"{neg.size} negative value(s)", image_id, int(neg[0]))
            )
    return report


@dataclass
class GroundTruth:
    """Relevance sets keyed by query id, in file order."""

    queries: list[tuple[str, frozenset[str]]]

    def __post_init__(self):
        self._lookup = dict(self.queries)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    @property
    def query_ids(self) -> list[str]:
        return [q for q, _ in self.queries]

    def relevant(self, query_id: str) -> frozenset[str]:
        try:
            return self._lookup[query_id]
        except KeyError:
            raise NotFound(f"query {query_id!r} not in ground truth") from None

    def missing_ids(self, known: Iterable[str]) -> set[str]:
        """Ids referenced here that are absent from ``known``."""
        known = set(known)
        referenced = set(self._lookup)
        for rel in self._lookup.values():
            referenced |= rel
        return referenced - known


def parse_ground_truth(lines: Iterable[str]) -> GroundTruth:
    queries = []
    seen = set()
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        qid, tab, rest = line.partition("\t")
        qid = qid.strip()
        if not tab or not qid:
            raise ParseError(f"line {lineno}: expected 'query_id<TAB>id,id,...'")
        if qid in seen:
            raise ParseError(f"line {lineno}: duplicate query {qid!r}")
        relevant = frozenset(x.strip() for x in rest.split(",") if x.strip())
        if not relevant:
            raise ParseError(f"line {lineno}: query {qid!r} has no relevant ids")
        seen.add(qid)
        queries.append((qid, relevant))
    return GroundTruth(queries)


def load_ground_truth(path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return parse_ground_truth(fh)


def write_ground_truth(gt: GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, rel in gt.queries:
            fh.write(f"{qid}\t{','.join(sorted(rel))}\n")
