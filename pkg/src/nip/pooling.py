"""Nested Invariance Pooling.

Each feature's orbit samples are reduced by a power mean,

    pool(v, n) = (1/m * sum_j v_j**n) ** (1/n),        pool(v, inf) = max(v)

(n=1 average, n=2 root mean square, n=inf max), and several such reductions
are chained across transformation groups: rotation, scale and translation
(the H x W grid of every feature map, collapsed in one step).

Sequences are written as comma-separated ``<moment>_<axis>`` tokens, e.g.
``"A_S,S_T,M_R"`` pools scale by average, then translation by RMS, then
rotation by max.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AxisReused, DomainError, EmptyOrbit, ParseError
from .orbit_store import OrbitTensor


class GroupAxis(enum.Enum):
    ROTATION = "R"
    SCALE = "S"
    TRANSLATION = "T"


# tensor dimensions each group axis collapses
_DIMS = {
    GroupAxis.ROTATION: ("rotation",),
    GroupAxis.SCALE: ("scale",),
    GroupAxis.TRANSLATION: ("row", "col"),
}


@dataclass(frozen=True)
class PoolOrder:
    """Moment order; ``n=None`` means infinity (max pooling)."""

    n: int | None

    def __post_init__(self):
        if self.n is not None and (not isinstance(self.n, (int, np.integer)) or self.n < 1):
            raise ValueError(f"finite pool order must be a positive integer, got {self.n!r}")

    @property
    def is_max(self) -> bool:
        return self.n is None

    def __str__(self):
        return {1: "A", 2: "S", None: "M"}.get(self.n, f"P{self.n}")


AVERAGE = PoolOrder(1)
RMS = PoolOrder(2)
MAX = PoolOrder(None)
_LETTERS = {"A": AVERAGE, "S": RMS, "M": MAX}


@dataclass(frozen=True)
class PoolSequence:
    steps: tuple[tuple[GroupAxis, PoolOrder], ...]

    def __post_init__(self):
        if not self.steps:
            raise ParseError("pool sequence is empty")
        axes = [a for a, _ in self.steps]
        if len(set(axes)) != len(axes):
            raise ParseError(f"axis repeated in pool sequence {self}")

    def __str__(self):
        return ",".join(f"{o}_{a.value}" for a, o in self.steps)

    def __iter__(self):
        return iter(self.steps)


_TOKEN = re.compile(r"^([ASM])_([RST])$")


def parse_sequence(s: str) -> PoolSequence:
    """Parse ``"A_S,S_T,M_R"``-style strings into a :class:`PoolSequence`."""
    steps = []
    seen = set()
    for tok in s.split(","):
        tok = tok.strip()
        m = _TOKEN.match(tok)
        if not m:
            raise ParseError(f"bad pool token {tok!r} in {s!r}; expected e.g. A_S, S_T, M_R")
        axis = GroupAxis(m.group(2))
        if axis in seen:
            raise ParseError(f"axis {axis.value} repeated in {s!r}")
        seen.add(axis)
        steps.append((axis, _LETTERS[m.group(1)]))
    return PoolSequence(tuple(steps))


def _power_mean_last(x: np.ndarray, order: PoolOrder) -> np.ndarray:
    """Power mean over the last axis of a float64 array.

    Samples are sorted before summation so the result does not depend on the
    order of the orbit samples, and factored by the max so large orders cannot
    overflow.
    """
    if order.is_max:
        return x.max(axis=-1)
    m = x.shape[-1]
    x = np.sort(x, axis=-1)
    low, top = x[..., 0], x[..., -1]
    safe = np.where(top > 0, top, 1.0)
    ratio = x / safe[..., None]
    if order.n == 1:
        out = safe * (ratio.sum(axis=-1) / m)
    else:
        out = safe * np.power(np.power(ratio, order.n).sum(axis=-1) / m, 1.0 / order.n)
    # rounding must not push a cell outside its sample range
    out = np.clip(out, low, top)
    return np.where(low == top, top, out)


def moment_pool(values: Sequence[float], order: PoolOrder) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyOrbit("cannot pool an empty orbit")
    if not np.all(np.isfinite(v)):
        raise DomainError("orbit contains non-finite values")
    if np.any(v < 0):
        raise DomainError("moment pooling requires non-negative values")
    return float(_power_mean_last(v, order))


@dataclass
class AxisTensor:
    """An orbit tensor with named dimensions, some of which may be pooled away."""

    data: np.ndarray
    dims: tuple[str, ...]

    @classmethod
    def from_orbit(cls, orbit: OrbitTensor | np.ndarray) -> "AxisTensor":
        data = orbit.data if isinstance(orbit, OrbitTensor) else np.asarray(orbit)
        if data.ndim != 5:
            raise ValueError(f"expected a 5-D orbit, got shape {data.shape}")
        return cls(np.asarray(data, dtype=np.float64), ("rotation", "scale", "channel", "row", "col"))

    @property
    def shape(self):
        return self.data.shape

    def has(self, axis: GroupAxis) -> bool:
        return all(d in self.dims for d in _DIMS[axis])


def pool_axis(t: AxisTensor, axis: GroupAxis, order: PoolOrder) -> AxisTensor:
    if not t.has(axis):
        raise AxisReused(f"axis {axis.name.lower()} already pooled (remaining dims {t.dims})")
    pooled = _DIMS[axis]
    pos = [t.dims.index(d) for d in pooled]
    keep = [i for i in range(t.data.ndim) if i not in pos]
    moved = np.moveaxis(t.data, pos, range(-len(pos), 0))
    flat = moved.reshape(moved.shape[: len(keep)] + (-1,))
    if np.any(flat < 0):
        raise DomainError("moment pooling requires non-negative values")
    return AxisTensor(_power_mean_last(flat, order), tuple(t.dims[i] for i in keep))


@dataclass
class Descriptor:
    values: np.ndarray
    sequence: str = ""
    image_id: str = ""

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def nip_descriptor(orbit: OrbitTensor | np.ndarray, seq: PoolSequence | str) -> Descriptor:
    """Apply every pooling step left to right and flatten channel-major."""
    if isinstance(seq, str):
        seq = parse_sequence(seq)
    t = AxisTensor.from_orbit(orbit)
    for axis, order in seq:
        t = pool_axis(t, axis, order)
    c = t.dims.index("channel")
    values = np.moveaxis(t.data, c, 0).reshape(-1)
    image_id = orbit.image_id if isinstance(orbit, OrbitTensor) else ""
    return Descriptor(values, str(seq), image_id)


def descriptor_dim(shape: Sequence[int], seq: PoolSequence | str) -> int:
    if isinstance(seq, str):
        seq = parse_sequence(seq)
    sizes = dict(zip(("rotation", "scale", "channel", "row", "col"), shape))
    for axis, _ in seq:
        for d in _DIMS[axis]:
            sizes.pop(d)
    return math.prod(sizes.values())


def nip_descriptors(orbits: Iterable[OrbitTensor], seq: PoolSequence | str, threads: int = 1) -> list[Descriptor]:
    """Descriptors for many orbits, optionally on a thread pool.

    Each image is reduced independently with a fixed summation order, so the
    result is identical for any ``threads``.
    """
    if isinstance(seq, str):
        seq = parse_sequence(seq)
    if threads <= 1:
        return [nip_descriptor(o, seq) for o in orbits]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda o: nip_descriptor(o, seq), orbits))
