import struct

import numpy as np
import pytest
from hypothesis import given, settings, HealthCheck
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nip.errors import CorruptStore, NotFound, ParseError, ShapeMismatch, ValidationError
from nip.orbit_store import (
    OrbitStore,
    OrbitTensor,
    StoreHeader,
    load_ground_truth,
    parse_ground_truth,
    read_orbit,
    validate_store,
    write_store,
)

from conftest import random_orbits


def test_tiny_store_layout(tmp_path):
    recs = [OrbitTensor("a", np.array([1.0, 2.0]).reshape(1, 1, 2, 1, 1)),
            OrbitTensor("b", np.array([3.0, 4.0]).reshape(1, 1, 2, 1, 1))]
    path = tmp_path / "s.nipo"
    write_store(recs, path)
    raw = path.read_bytes()
    assert raw[:4] == b"NIPO"
    # header + empty metadata + index (count + 2 x (u16 + 1 byte id + u64)) + 16 payload bytes
    assert len(raw) == StoreHeader.SIZE + 4 + 8 + 2 * (2 + 1 + 8) + 16
    assert np.frombuffer(raw[-16:], dtype="<f4").tolist() == [1.0, 2.0, 3.0, 4.0]
    store = OrbitStore(path)
    for rec in recs:
        np.testing.assert_array_equal(read_orbit(store, rec.image_id).data, rec.data)


def test_round_trip_and_order(tmp_path, orbits):
    path = tmp_path / "s.nipo"
    write_store(orbits[::-1], path, {"note": "x"})
    store = OrbitStore(path)
    assert store.ids == [o.image_id for o in orbits[::-1]]
    assert store.metadata == {"note": "x"}
    assert [e[0] for e in store.index] == sorted(o.image_id for o in orbits)
    for o in orbits:
        assert np.array_equal(store.read(o.image_id).data, o.data)


def test_deterministic_bytes(tmp_path, orbits):
    write_store(orbits, tmp_path / "a")
    write_store(orbits, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_full_size_geometry_header(tmp_path):
    # two full-size orbits (36 rotations, 10 crops, 512 maps of 7x7); the header
    # for 100 such images is checked through the same packing code
    shape = (36, 10, 512, 7, 7)
    recs = [OrbitTensor(f"i{k}", np.zeros(shape, np.float32)) for k in range(2)]
    write_store(recs, tmp_path / "big.nipo")
    hdr = OrbitStore(tmp_path / "big.nipo").header
    assert hdr.shape == shape
    packed = StoreHeader.for_records(100, shape).pack()
    h100 = StoreHeader.unpack(packed)
    assert (h100.n_images, h100.n_rot, h100.n_scale, h100.channels, h100.height, h100.width) == (100, 36, 10, 512, 7, 7)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -1.0])
def test_write_rejects_invalid_values(tmp_path, bad):
    data = np.ones((1, 1, 2, 1, 1))
    data[0, 0, 1, 0, 0] = bad
    with pytest.raises(ValidationError):
        write_store([OrbitTensor("x", data)], tmp_path / "s")
    assert not (tmp_path / "s").exists()


def test_write_rejects_mixed_shapes(tmp_path):
    recs = [OrbitTensor("a", np.ones((1, 1, 2, 1, 1))), OrbitTensor("b", np.ones((1, 1, 3, 1, 1)))]
    with pytest.raises(ShapeMismatch):
        write_store(recs, tmp_path / "s")


def test_write_rejects_empty_and_duplicates(tmp_path):
    with pytest.raises(ValidationError):
        write_store([], tmp_path / "s")
    rec = OrbitTensor("a", np.ones((1, 1, 1, 1, 1)))
    with pytest.raises(ValidationError):
        write_store([rec, rec], tmp_path / "s")


def test_orbit_must_be_5d():
    with pytest.raises(ShapeMismatch):
        OrbitTensor("x", np.ones((2, 2)))


def test_read_missing(tmp_path, orbits):
    write_store(orbits, tmp_path / "s")
    with pytest.raises(NotFound):
        read_orbit(OrbitStore(tmp_path / "s"), "missing")


def test_truncated_payload(tmp_path, orbits):
    path = tmp_path / "s"
    write_store(orbits, path)
    path.write_bytes(path.read_bytes()[:-1])
    store = OrbitStore(path)
    with pytest.raises(CorruptStore):
        store.read(orbits[-1].image_id)
    # earlier records are intact
    assert np.array_equal(store.read(orbits[0].image_id).data, orbits[0].data)
    report = validate_store(path)
    assert not report.passed
    assert {f.kind for f in report.findings} == {"size", "payload"}


def test_bad_magic(tmp_path, orbits):
    path = tmp_path / "s"
    write_store(orbits, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptStore):
        OrbitStore(path)
    report = validate_store(path)
    assert not report.passed and report.findings[0].kind == "header"


def test_validate_clean(tmp_path, orbits):
    write_store(orbits, tmp_path / "s")
    report = validate_store(tmp_path / "s")
    assert report.passed and report.findings == [] and report.n_records == len(orbits)


def test_validate_reports_injected_negative(tmp_path, orbits):
    path = tmp_path / "s"
    write_store(orbits, path)
    store = OrbitStore(path)
    target = orbits[2].image_id
    flat = 7
    raw = bytearray(path.read_bytes())
    off = store._offsets[target] + 4 * flat
    raw[off:off + 4] = struct.pack("<f", -0.5)
    path.write_bytes(bytes(raw))
    report = validate_store(path)
    assert not report.passed
    [finding] = report.findings
    assert (finding.kind, finding.image_id, finding.flat_index) == ("negative", target, flat)


def test_validate_reports_forged_count(tmp_path, orbits):
    path = tmp_path / "s"
    write_store(orbits, path)
    raw = bytearray(path.read_bytes())
    raw[8:16] = struct.pack("<Q", len(orbits) + 1)
    path.write_bytes(bytes(raw))
    report = validate_store(path)
    assert any(f.kind == "header" and "n_images" in f.detail for f in report.findings)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    data=hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=5, max_dims=5, min_side=1, max_side=3),
        elements=st.floats(0, 1e6, width=32),
    ),
    image_id=st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20).filter(
        lambda s: len(s.encode()) <= 256
    ),
)
def test_round_trip_property(tmp_path, data, image_id):
    path = tmp_path / "p.nipo"
    write_store([OrbitTensor(image_id, data)], path)
    store = OrbitStore(path)
    assert store.ids == [image_id]
    np.testing.assert_array_equal(store.read(image_id).data, data)
    assert validate_store(store).passed


# --- ground truth -------------------------------------------------------------------------


def test_gt_basic():
    gt = parse_ground_truth(["q1\ta,b,a\n"])
    assert gt.queries == [("q1", frozenset({"a", "b"}))]


@pytest.mark.parametrize("line", ["q1\t", "q1\t , ", "no-tab-here", "\ta,b"])
def test_gt_malformed(line):
    with pytest.raises(ParseError, match="line 2"):
        parse_ground_truth(["q0\tx", line])


def test_gt_ukb_style(tmp_path):
    # groups of 4: every image relevant to its 3 groupmates and itself
    lines = []
    for g in range(5):
        members = [f"{4 * g + k:05d}" for k in range(4)]
        lines += [f"{m}\t{','.join(members)}\n" for m in members]
    path = tmp_path / "gt.tsv"
    path.write_text("".join(lines))
    gt = load_ground_truth(path)
    assert len(gt) == 20
    assert all(len(rel) == 4 and q in rel for q, rel in gt)
    assert gt.missing_ids([f"{k:05d}" for k in range(20)]) == set()
    assert gt.missing_ids([f"{k:05d}" for k in range(19)]) == {"00019"}


def test_random_orbits_helper_is_valid(rng):
    for rec in random_orbits(rng, 3):
        rec.check()
