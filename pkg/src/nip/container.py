"""Low-level pieces shared by the binary file formats.

Every file written by this package has the layout::

    fixed header | metadata block | id index | payload

* metadata block: u32 byte length, then UTF-8 ``key=value`` lines sorted by key
* id index: u64 entry count, then per entry u16 id length, id bytes, u64
  absolute byte offset of the record payload; entries sorted by id bytes

All integers are little-endian.
"""
from __future__ import annotations

import hashlib
import struct
from typing import BinaryIO, Iterable, Mapping, Sequence

from .errors import CorruptStore, ValidationError

MAX_ID_BYTES = 256

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def encode_id(image_id: str) -> bytes:
    raw = image_id.encode("utf-8")
    if not raw:
        raise ValidationError("empty image id")
    if len(raw) > MAX_ID_BYTES:
        raise ValidationError(f"image id longer than {MAX_ID_BYTES} bytes: {image_id[:40]!r}...")
    return raw


def pack_metadata(meta: Mapping[str, object] | None) -> bytes:
    lines = []
    for key in sorted(meta or {}):
        value = str(meta[key]).replace("\\", "\\\\").replace("\n", "\\n")
        if "=" in key or "\n" in key:
            raise ValidationError(f"bad metadata key {key!r}")
        lines.append(f"{key}={value}\n")
    body = "".join(lines).encode("utf-8")
    return _U32.pack(len(body)) + body


def unpack_metadata(text: bytes) -> dict[str, str]:
    meta = {}
    for line in text.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptStore(f"malformed metadata line {line!r}")
        meta[key] = value.replace("\\n", "\n").replace("\\\\", "\\")
    return meta


def read_metadata(fh: BinaryIO) -> dict[str, str]:
    (length,) = _U32.unpack(read_exact(fh, 4, "metadata length"))
    return unpack_metadata(read_exact(fh, length, "metadata block"))


def index_size(ids: Iterable[str]) -> int:
    return 8 + sum(2 + len(encode_id(i)) + 8 for i in ids)


def pack_index(ids: Sequence[str], offsets: Sequence[int]) -> bytes:
    """Index bytes for ``ids[k]`` stored at ``offsets[k]``; sorted by id."""
    encoded = [encode_id(i) for i in ids]
    if len(set(encoded)) != len(encoded):
        raise ValidationError("duplicate image ids")
    order = sorted(range(len(ids)), key=lambda k: encoded[k])
    parts = [_U64.pack(len(ids))]
    for k in order:
        parts.append(_U16.pack(len(encoded[k])) + encoded[k] + _U64.pack(offsets[k]))
    return b"".join(parts)


def read_index(fh: BinaryIO) -> list[tuple[str, int]]:
    """(id, offset) pairs in on-disk (sorted) order."""
    (count,) = _U64.unpack(read_exact(fh, 8, "index count"))
    entries = []
    for _ in range(count):
        (n,) = _U16.unpack(read_exact(fh, 2, "index entry"))
        if n == 0 or n > MAX_ID_BYTES:
            raise CorruptStore(f"bad id length {n} in index")
        raw = read_exact(fh, n, "index id")
        (offset,) = _U64.unpack(read_exact(fh, 8, "index offset"))
        try:
            entries.append((raw.decode("utf-8"), offset))
        except UnicodeDecodeError as exc:
            raise CorruptStore("non UTF-8 id in index") from exc
    return entries


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptStore(f"unexpected end of file while reading {what}")
    return data


def check_magic(got: bytes, expected: bytes, version: int, expected_version: int = 1) -> None:
    if got != expected:
        raise CorruptStore(f"bad magic {got!r}, expected {expected!r}")
    if version != expected_version:
        raise CorruptStore(f"unsupported version {version}")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
