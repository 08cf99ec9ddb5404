"""Descriptor, hash and model files.

Descriptor file ("NIPD")::

    "NIPD" | u32 version | u64 N | u32 dim | u8 dtype_code(0 = float32 LE)
    metadata | id index | N x dim float32 rows

Hash file ("NIPH")::

    "NIPH" | u32 version | u64 N | u32 n_bits
    metadata | id index | N x ceil(n_bits/8) packed rows (LSB-first)

Model file ("NIPM"), used for PCA/whitening, threshold, LSH, PCAHash, ITQ::

    "NIPM" | u32 version | u8 tag length | tag | u32 n_arrays
    per array: u8 name length | name | u8 ndim | u64 x ndim shape | float64 LE data
    metadata

RBM hasher file ("NIPR")::

    "NIPR" | u32 version | u32 I | u32 J | c (I) | b (J) | W (J x I) | lo (I) | span (I)
    metadata (training config echoed as key=value)

In the descriptor and hash files the index offsets point at rows; rows are
stored in the order they were given to the writer.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .baselines import ItqModel, LshModel, PcaHashModel
from .errors import CorruptStore, DimError, ValidationError
from .postproc import PcaModel, ThresholdModel, code_stride
from .rbmh import RbmHasher, RbmParams, TrainConfig

VERSION = 1
_DESC_HEADER = struct.Struct("<4sIQIB")
_HASH_HEADER = struct.Struct("<4sIQI")
_RBM_HEADER = struct.Struct("<4sIII")
_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")


def _atomic_write(path, chunks: Sequence[bytes]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _rows_container(header: bytes, meta, ids, rows: np.ndarray) -> list[bytes]:
    meta_b = container.pack_metadata(meta)
    ids = list(ids)
    if len(ids) != rows.shape[0]:
        raise ValidationError(f"{len(ids)} ids for {rows.shape[0]} rows")
    row_bytes = rows.dtype.itemsize * (rows.shape[1] if rows.ndim > 1 else 1)
    start = len(header) + len(meta_b) + container.index_size(ids)
    index = container.pack_index(ids, [start + k * row_bytes for k in range(len(ids))])
    return [header, meta_b, index, np.ascontiguousarray(rows).tobytes()]


def _read_rows(fh, path, n: int, row_bytes: int):
    meta = container.read_metadata(fh)
    index = container.read_index(fh)
    if len(index) != n:
        raise CorruptStore(f"{path}: header says {n} rows, index has {len(index)}")
    start = fh.tell()
    payload = fh.read()
    if len(payload) != n * row_bytes:
        raise CorruptStore(f"{path}: payload has {len(payload)} bytes, expected {n * row_bytes}")
    ids = [None] * n
    for image_id, offset in index:
        k, rem = divmod(offset - start, row_bytes) if row_bytes else (0, 0)
        if rem or not 0 <= k < n or ids[k] is not None:
            raise CorruptStore(f"{path}: bad offset {offset} for {image_id!r}")
        ids[k] = image_id
    return meta, ids, payload


@dataclass
class DescriptorSet:
    ids: list[str]
    values: np.ndarray  # (N, dim) float32
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.ids, self.values))


def write_descriptors(path, ids, values: np.ndarray, metadata=None) -> None:
    values = np.asarray(values, dtype=_F32)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ValidationError("descriptor matrix must be non-empty N x dim")
    if not np.all(np.isfinite(values)):
        raise ValidationError("descriptors contain non-finite values")
    header = _DESC_HEADER.pack(b"NIPD", VERSION, values.shape[0], values.shape[1], 0)
    _atomic_write(path, _rows_container(header, metadata, ids, values))


def read_descriptors(path) -> DescriptorSet:
    with open(path, "rb") as fh:
        magic, version, n, dim, dtype_code = _DESC_HEADER.unpack(
            container.read_exact(fh, _DESC_HEADER.size, "descriptor header")
        )
        container.check_magic(magic, b"NIPD", version, VERSION)
        if dtype_code != 0:
            raise CorruptStore(f"unsupported dtype code {dtype_code}")
        meta, ids, payload = _read_rows(fh, path, n, dim * 4)
    values = np.frombuffer(payload, dtype=_F32).reshape(n, dim).astype(np.float32)
    return DescriptorSet(ids, values, meta)


@dataclass
class HashSet:
    ids: list[str]
    codes: np.ndarray  # (N, stride) uint8
    n_bits: int
    metadata: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.ids, self.codes))


def write_hashes(path, ids, codes: np.ndarray, n_bits: int, metadata=None) -> None:
    codes = np.asarray(codes, dtype=np.uint8)
    if codes.ndim != 2 or codes.shape[1] != code_stride(n_bits) or codes.shape[0] == 0:
        raise ValidationError(f"codes shape {codes.shape} does not fit {n_bits} bits")
    header = _HASH_HEADER.pack(b"NIPH", VERSION, codes.shape[0], n_bits)
    _atomic_write(path, _rows_container(header, metadata, ids, codes))


def read_hashes(path) -> HashSet:
    with open(path, "rb") as fh:
        magic, version, n, n_bits = _HASH_HEADER.unpack(
            container.read_exact(fh, _HASH_HEADER.size, "hash header")
        )
        container.check_magic(magic, b"NIPH", version, VERSION)
        stride = code_stride(n_bits)
        meta, ids, payload = _read_rows(fh, path, n, stride)
    codes = np.frombuffer(payload, dtype=np.uint8).reshape(n, stride).copy()
    return HashSet(ids, codes, n_bits, meta)


# --- models -------------------------------------------------------------------------------


def _pack_arrays(tag: str, arrays: dict[str, np.ndarray], meta) -> list[bytes]:
    tag_b = tag.encode("ascii")
    parts = [b"NIPM", struct.pack("<IB", VERSION, len(tag_b)), tag_b, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=_F64)
        name_b = name.encode("ascii")
        parts.append(struct.pack("<B", len(name_b)) + name_b + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    parts.append(container.pack_metadata(meta))
    return parts


def _unpack_arrays(path) -> tuple[str, dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        rx = container.read_exact
        magic = rx(fh, 4, "magic")
        version, tag_len = struct.unpack("<IB", rx(fh, 5, "model header"))
        container.check_magic(magic, b"NIPM", version, VERSION)
        tag = rx(fh, tag_len, "tag").decode("ascii")
        (count,) = struct.unpack("<I", rx(fh, 4, "array count"))
        arrays = {}
        for _ in range(count):
            (nl,) = struct.unpack("<B", rx(fh, 1, "name length"))
            name = rx(fh, nl, "name").decode("ascii")
            (ndim,) = struct.unpack("<B", rx(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}Q", rx(fh, 8 * ndim, "shape"))
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(rx(fh, 8 * size, name), dtype=_F64).reshape(shape).copy()
        meta = container.read_metadata(fh)
    return tag, arrays, meta


def _write_rbm(path, m: RbmHasher, meta) -> None:
    p = m.params
    header = _RBM_HEADER.pack(b"NIPR", VERSION, p.n_visible, p.n_hidden)
    cfg = {f"train.{k}": v for k, v in m.config.as_dict().items()}
    body = [np.ascontiguousarray(a, dtype=_F64).tobytes() for a in (p.c, p.b, p.W, m.lo, m.span)]
    _atomic_write(path, [header, *body, container.pack_metadata({**cfg, **(meta or {})})])


def _read_rbm(path) -> tuple[RbmHasher, dict[str, str]]:
    with open(path, "rb") as fh:
        magic, version, I, J = _RBM_HEADER.unpack(container.read_exact(fh, _RBM_HEADER.size, "RBM header"))
        container.check_magic(magic, b"NIPR", version, VERSION)

        def arr(n, what):
            return np.frombuffer(container.read_exact(fh, 8 * n, what), dtype=_F64).copy()

        c, b = arr(I, "c"), arr(J, "b")
        W = arr(I * J, "W").reshape(J, I)
        lo, span = arr(I, "lo"), arr(I, "span")
        meta = container.read_metadata(fh)
    fields = TrainConfig.__dataclass_fields__
    cfg_kwargs = {}
    for key, value in meta.items():
        name = key.removeprefix("train.")
        if key.startswith("train.") and name in fields:
            cfg_kwargs[name] = type(fields[name].default)(value)
    return RbmHasher(RbmParams(W, b, c), lo, span, TrainConfig(**cfg_kwargs)), meta


Model = PcaModel | ThresholdModel | LshModel | PcaHashModel | ItqModel | RbmHasher


def save_model(path, model: Model, metadata=None) -> None:
    meta = dict(metadata or {})
    if isinstance(model, RbmHasher):
        return _write_rbm(path, model, meta)
    if isinstance(model, PcaModel):
        tag = "pca-whiten" if model.whiten else "pca"
        arrays = {"mean": model.mean, "eigenvalues": model.eigenvalues, "projection": model.projection,
                  "epsilon": np.array(model.epsilon)}
    elif isinstance(model, ThresholdModel):
        tag, arrays = f"threshold-{model.mode}", {"thresholds": model.thresholds}
    elif isinstance(model, LshModel):
        tag, arrays = "lsh", {"projections": model.projections}
        meta["seed"] = model.seed
    elif isinstance(model, PcaHashModel):
        p = model.pca
        tag, arrays = "pcahash", {"mean": p.mean, "eigenvalues": p.eigenvalues, "projection": p.projection}
        meta.setdefault("centered", 1)
    elif isinstance(model, ItqModel):
        p = model.pca
        tag = "itq"
        arrays = {"mean": p.mean, "eigenvalues": p.eigenvalues, "projection": p.projection,
                  "rotation": model.rotation, "losses": np.asarray(model.losses)}
        meta.setdefault("iterations", model.iterations)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    _atomic_write(path, _pack_arrays(tag, arrays, meta))


def load_model(path) -> tuple[Model, dict[str, str]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"NIPR":
        return _read_rbm(path)
    tag, a, meta = _unpack_arrays(path)
    if tag in ("pca", "pca-whiten"):
        model = PcaModel(a["mean"], a["projection"], a["eigenvalues"], float(a["epsilon"]), tag == "pca-whiten")
    elif tag.startswith("threshold-"):
        model = ThresholdModel(a["thresholds"], tag.removeprefix("threshold-"))
    elif tag == "lsh":
        model = LshModel(a["projections"], int(meta["seed"]))
    elif tag == "pcahash":
        model = PcaHashModel(PcaModel(a["mean"], a["projection"], a["eigenvalues"], 0.0, False))
    elif tag == "itq":
        pca = PcaModel(a["mean"], a["projection"], a["eigenvalues"], 0.0, False)
        model = ItqModel(pca, a["rotation"], int(meta.get("iterations", 0)), a["losses"].tolist())
    else:
        raise CorruptStore(f"{path}: unknown model tag {tag!r}")
    return model, meta


def model_dims(model: Model) -> tuple[int, int]:
    """(input dim, output dim or bits)."""
    if isinstance(model, PcaModel):
        return model.in_dim, model.out_dim
    if isinstance(model, ThresholdModel):
        return model.n_bits, model.n_bits
    if hasattr(model, "in_dim") and hasattr(model, "n_bits"):
        return model.in_dim, model.n_bits
    raise DimError(f"unknown model type {type(model).__name__}")
