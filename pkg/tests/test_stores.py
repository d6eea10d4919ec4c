import struct

import numpy as np
import orjson
import pytest

from app.nn.params import Mask
from app.utils.hashing import bytes_sha256, combine_hashes, digest_chunks, file_sha256
from ingest.mask_store import decode_mask, encode_mask, read_mask, write_mask
from ingest.run_store import (
    BlobHashMismatchError,
    BlobStore,
    BundleFormatError,
    decode_bundle,
    encode_bundle,
    list_manifests,
    manifest_path,
    read_run_record,
    read_run_records,
    write_run_record,
)
from parsers.base import MaskFormatError, SchemaError, VersionMismatchError


@pytest.fixture
def mask():
    rng = np.random.default_rng(4)
    return Mask.build(
        ["conv1", "dense2"],
        [rng.random((6, 25)) < 0.3, rng.random((10, 13)) < 0.5],
    )


# ----------------------------- TCKT -----------------------------

def test_mask_round_trip(tmp_path, mask):
    path = write_mask(mask, tmp_path / "m.tckt")
    back = read_mask(path)
    assert back.equals(mask)
    assert back.tau == mask.tau
    assert encode_mask(back) == path.read_bytes()


def test_mask_header_layout(mask):
    data = encode_mask(mask)
    assert data[:4] == b"TCKT"
    assert struct.unpack(">HI", data[4:10]) == (1, 2)
    (name_len,) = struct.unpack(">H", data[10:12])
    assert data[12:12 + name_len] == b"conv1"


def test_mask_truncation_is_positioned(mask):
    data = encode_mask(mask)[:-5]
    with pytest.raises(MaskFormatError) as e:
        decode_mask(data)
    assert e.value.offset is not None and 0 < e.value.offset < len(data)


def test_mask_bad_magic_and_version(mask):
    data = encode_mask(mask)
    with pytest.raises(MaskFormatError) as e:
        decode_mask(b"XXXX" + data[4:])
    assert e.value.offset == 0
    with pytest.raises(VersionMismatchError):
        decode_mask(data[:4] + struct.pack(">H", 2) + data[6:])


def test_mask_trailing_bytes(mask):
    data = encode_mask(mask)
    with pytest.raises(MaskFormatError) as e:
        decode_mask(data + b"\x00")
    assert e.value.offset == len(data)


def test_mask_popcount_must_match_tau():
    m = Mask.build(["dense1"], [np.array([[True, False, True, False]])])
    data = bytearray(encode_mask(m))
    data[-1] ^= 0b00010000  # flip the 4th bit
    with pytest.raises(SchemaError):
        decode_mask(bytes(data))


def test_mask_padding_bits_must_be_zero():
    m = Mask.build(["dense1"], [np.array([[True, False, True]])])
    data = bytearray(encode_mask(m))
    data[-1] |= 0b00000001
    with pytest.raises(MaskFormatError):
        decode_mask(bytes(data))


# ----------------------------- TCKW -----------------------------

def test_bundle_round_trip_is_bit_exact():
    arrays = {"b": np.array([np.pi, -0.0, 1e-300]), "a": np.arange(6.0).reshape(2, 3)}
    back = decode_bundle(encode_bundle(arrays))
    assert list(back) == ["a", "b"]
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    assert encode_bundle(arrays) == encode_bundle(dict(reversed(list(arrays.items()))))


def test_bundle_errors():
    data = encode_bundle({"a": np.ones(3)})
    with pytest.raises(BundleFormatError):
        decode_bundle(data[:-1])
    with pytest.raises(BundleFormatError):
        decode_bundle(b"ABCD" + data[4:])
    with pytest.raises(VersionMismatchError):
        decode_bundle(data[:4] + struct.pack(">H", 9) + data[6:])


# ----------------------------- blobs -----------------------------

def test_blob_store_dedupes_and_verifies(tmp_path, mask):
    store = BlobStore(tmp_path)
    d1 = store.put_mask(mask)
    assert store.put_mask(mask) == d1
    assert len(list((tmp_path / "blobs").iterdir())) == 1
    assert store.get_mask(d1).equals(mask)

    blob = tmp_path / "blobs" / f"{d1}.tckt"
    raw = bytearray(blob.read_bytes())
    raw[-1] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(BlobHashMismatchError):
        store.get_mask(d1)
    with pytest.raises(FileNotFoundError):
        store.get("0" * 64, "tckt")


def test_outputs_blob(tmp_path):
    store = BlobStore(tmp_path)
    probs = np.full((3, 2), 0.5)
    assert np.array_equal(store.get_outputs(store.put_outputs(probs)), probs)
    digest = store.put(encode_bundle({"x": np.ones(1)}), "tckw")
    with pytest.raises(SchemaError):
        store.get_outputs(digest)


# ----------------------------- manifests -----------------------------

def test_run_record_round_trip(tmp_path, make_record):
    rec = make_record(3, 1, steps=6)
    path = write_run_record(rec, tmp_path, plan_fingerprint="abc")
    assert path == manifest_path(tmp_path, "task", 3, 1)
    m = orjson.loads(path.read_bytes())
    assert len(m["steps"]) == 6
    assert m["plan_fingerprint"] == "abc"
    assert m["regime"] == "free"
    back = read_run_record(path)
    assert back.equals(rec)
    assert (back.seed, back.run_id, back.task) == (3, 1, "task")
    assert back.policy == rec.policy and back.config == rec.config


def test_run_records_share_init_blob(tmp_path, make_record):
    write_run_record(make_record(0, 0), tmp_path)
    write_run_record(make_record(0, 1), tmp_path)
    a, b = (orjson.loads(p.read_bytes()) for p in list_manifests(tmp_path))
    assert a["init_blob"] == b["init_blob"]
    assert [r.run_id for r in read_run_records(tmp_path)] == [0, 1]


def test_tampered_init_hash_rejected(tmp_path, make_record):
    path = write_run_record(make_record(0, 0), tmp_path)
    m = orjson.loads(path.read_bytes())
    m["init_hash"] = "f" * 64
    path.write_bytes(orjson.dumps(m))
    with pytest.raises(SchemaError):
        read_run_record(path)


def test_manifest_format_checks(tmp_path, make_record):
    path = write_run_record(make_record(0, 0), tmp_path)
    m = orjson.loads(path.read_bytes())
    path.write_bytes(orjson.dumps({**m, "version": 7}))
    with pytest.raises(VersionMismatchError):
        read_run_record(path)
    path.write_bytes(orjson.dumps({**m, "format": "other"}))
    with pytest.raises(SchemaError):
        read_run_record(path)
    del m["config"]
    path.write_bytes(orjson.dumps(m))
    with pytest.raises(SchemaError):
        read_run_record(path)
    path.write_bytes(b"{not json")
    with pytest.raises(SchemaError):
        read_run_record(path)


def test_no_manifests(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_run_records(tmp_path)


def test_hash_helpers(tmp_path):
    p = tmp_path / "blob.bin"
    p.write_bytes(b"ticket")
    assert file_sha256(p) == bytes_sha256(b"ticket") == digest_chunks([b"tic", b"ket"])
    a, b = bytes_sha256(b"a"), bytes_sha256(b"b")
    assert combine_hashes([a, b]) == combine_hashes([b, a])
    with pytest.raises(ValueError):
        combine_hashes([a, "xyz"])
    with pytest.raises(FileNotFoundError):
        file_sha256(tmp_path / "missing.bin")
