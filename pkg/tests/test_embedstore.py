import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oe_forge import embedstore
from oe_forge.embedstore import EmbeddingSet, LabelSpace, l2_normalize, load, save
from oe_forge.errors import (
    FormatError,
    OEForgeError,
    TruncationError,
    ValidationError,
)

HEADER = struct.Struct("<4sIIQI")


def make_set(rng, count=5, dim=3, labels=False, meta=False):
    data = rng.normal(size=(count, dim)).astype(np.float32)
    lab = rng.integers(0, 4, size=count) if labels else None
    m = tuple({"text": f"t{i}", "source": "unit"} for i in range(count)) if meta else None
    return EmbeddingSet(data=data, labels=lab, meta=m)


# ------------------------------------------------------------------ format

def test_empty_set_is_header_only(tmp_path):
    path = tmp_path / "empty.emb"
    save(EmbeddingSet(data=np.empty((0, 4), dtype=np.float32)), path)
    assert path.stat().st_size == 24
    es = load(path)
    assert es.count == 0 and es.dim == 4


def test_known_payload(tmp_path):
    path = tmp_path / "k.emb"
    payload = np.array([1, 0, 0, 1, 1, 1], dtype="<f4").tobytes()
    path.write_bytes(HEADER.pack(b"EMB1", 1, 2, 3, 0) + payload)
    es = load(path)
    assert es.count == 3 and es.dim == 2
    assert tuple(es.data[2]) == (1.0, 1.0)


def test_roundtrip_bytes(tmp_path, rng):
    for i, (labels, meta) in enumerate([(False, False), (True, False),
                                        (True, True), (False, True)]):
        path = tmp_path / f"r{i}.emb"
        es = make_set(rng, count=7, dim=5, labels=labels, meta=meta)
        save(es, path)
        original = path.read_bytes()
        es2 = load(path)
        assert np.array_equal(es.data, es2.data)
        if labels:
            assert np.array_equal(es.labels, es2.labels)
        else:
            assert es2.labels is None
        assert es2.meta == (es.meta if meta else None)
        path2 = tmp_path / f"r{i}b.emb"
        save(es2, path2)
        assert path2.read_bytes() == original
        meta_path = tmp_path / f"r{i}b.emb.meta.jsonl"
        assert meta_path.exists() == meta


@settings(max_examples=30, deadline=None)
@given(
    count=st.integers(0, 12),
    dim=st.integers(1, 8),
    with_labels=st.booleans(),
    seed=st.integers(0, 2**31),
)
def test_roundtrip_random(tmp_path_factory, count, dim, with_labels, seed):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("rt") / "x.emb"
    es = EmbeddingSet(
        data=rng.normal(size=(count, dim)).astype(np.float32),
        labels=rng.integers(0, 9, size=count) if with_labels else None,
    )
    save(es, path)
    blob1 = path.read_bytes()
    save(load(path), path)
    assert path.read_bytes() == blob1


@pytest.mark.parametrize("field,expect", [
    ("magic", FormatError),
    ("version", FormatError),
    ("dim", OEForgeError),
    ("count", OEForgeError),
    ("flags", FormatError),
])
def test_corrupt_header_rejected(tmp_path, rng, field, expect):
    path = tmp_path / "c.emb"
    save(make_set(rng, count=4, dim=3), path)
    blob = bytearray(path.read_bytes())
    if field == "magic":
        blob[0:4] = b"XEMB"
    elif field == "version":
        blob[4:8] = struct.pack("<I", 9)
    elif field == "dim":
        blob[8:12] = struct.pack("<I", 7)
    elif field == "count":
        blob[12:20] = struct.pack("<Q", 40)
    elif field == "flags":
        blob[20:24] = struct.pack("<I", 0x8)
    path.write_bytes(bytes(blob))
    with pytest.raises(expect):
        load(path)


def test_zero_dim_rejected(tmp_path):
    path = tmp_path / "d0.emb"
    path.write_bytes(HEADER.pack(b"EMB1", 1, 0, 0, 0))
    with pytest.raises(ValidationError):
        load(path)


def test_truncated_payload(tmp_path, rng):
    path = tmp_path / "t.emb"
    save(make_set(rng, count=4, dim=3), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(TruncationError):
        load(path)


def test_trailing_bytes_rejected(tmp_path, rng):
    path = tmp_path / "t2.emb"
    save(make_set(rng, count=4, dim=3), path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError):
        load(path)


def test_nonfinite_payload_names_row(tmp_path):
    path = tmp_path / "nan.emb"
    data = np.array([[1, 2], [np.nan, 0], [3, 4]], dtype="<f4")
    path.write_bytes(HEADER.pack(b"EMB1", 1, 2, 3, 0) + data.tobytes())
    with pytest.raises(ValidationError, match="row 1"):
        load(path)


def test_meta_row_order_enforced(tmp_path, rng):
    path = tmp_path / "m.emb"
    save(make_set(rng, count=2, dim=2, meta=True), path)
    meta_path = tmp_path / "m.emb.meta.jsonl"
    lines = meta_path.read_text().splitlines()
    meta_path.write_text("\n".join(reversed(lines)) + "\n")
    with pytest.raises(ValidationError, match="out of order"):
        load(path)


def test_meta_unknown_key_rejected(tmp_path, rng):
    path = tmp_path / "mk.emb"
    save(make_set(rng, count=1, dim=2), path)
    (tmp_path / "mk.emb.meta.jsonl").write_text('{"row":0,"surprise":1}\n')
    with pytest.raises(ValidationError, match="unknown keys"):
        load(path)


def test_meta_count_mismatch(tmp_path, rng):
    path = tmp_path / "mc.emb"
    save(make_set(rng, count=3, dim=2, meta=True), path)
    meta_path = tmp_path / "mc.emb.meta.jsonl"
    lines = meta_path.read_text().splitlines()
    meta_path.write_text("\n".join(lines[:2]) + "\n")
    with pytest.raises(ValidationError):
        load(path)


# -------------------------------------------------------------- validation

def test_labels_length_checked():
    with pytest.raises(ValidationError):
        EmbeddingSet(data=np.zeros((3, 2), dtype=np.float32), labels=np.array([0, 1]))


def test_nonfinite_data_rejected():
    with pytest.raises(ValidationError, match="row 0"):
        EmbeddingSet(data=np.array([[np.inf, 0.0]], dtype=np.float32))


def test_data_is_readonly(rng):
    es = make_set(rng)
    with pytest.raises(ValueError):
        es.data[0, 0] = 5.0


def test_label_space_invariants():
    with pytest.raises(ValidationError):
        LabelSpace(["only"])
    with pytest.raises(ValidationError):
        LabelSpace(["a", "a"])
    with pytest.raises(ValidationError):
        LabelSpace(["a", ""])
    assert LabelSpace(["a", "b", "c"]).C == 3


def test_take_preserves_labels_and_meta(rng):
    es = make_set(rng, count=6, labels=True, meta=True)
    sub = es.take([4, 1])
    assert np.array_equal(sub.data, es.data[[4, 1]])
    assert list(sub.labels) == [es.labels[4], es.labels[1]]
    assert sub.meta == (es.meta[4], es.meta[1])


# --------------------------------------------------------------- normalize

def test_l2_normalize_345():
    es = EmbeddingSet(data=np.array([[3.0, 4.0]], dtype=np.float32))
    out = l2_normalize(es)
    assert out.data[0, 0] == np.float32(0.6)
    assert out.data[0, 1] == np.float32(0.8)


def test_l2_normalize_unit_row_unchanged():
    es = EmbeddingSet(data=np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.float32))
    out = l2_normalize(es)
    assert np.array_equal(out.data, es.data)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), count=st.integers(1, 20), dim=st.integers(1, 40))
def test_l2_normalize_norm_and_idempotence(seed, count, dim):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(count, dim)).astype(np.float32)
    data[np.linalg.norm(data, axis=1) == 0] = 1.0
    out = l2_normalize(EmbeddingSet(data=data))
    norms = np.linalg.norm(out.data.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)
    again = l2_normalize(out)
    assert np.all(np.abs(again.data - out.data) < 1e-7)


def test_l2_normalize_zero_row_named():
    es = EmbeddingSet(data=np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32))
    with pytest.raises(ValidationError, match="row 1"):
        l2_normalize(es)


def test_l2_normalize_keeps_labels_meta(rng):
    es = make_set(rng, labels=True, meta=True)
    out = l2_normalize(es)
    assert np.array_equal(out.labels, es.labels)
    assert out.meta == es.meta
