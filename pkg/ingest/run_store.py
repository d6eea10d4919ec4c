# ticketlab/ingest/run_store.py
# -*- coding: utf-8 -*-
"""
Run persistence: JSON manifests referencing content-addressed binary blobs.

Layout under an output directory:
  blobs/<sha256>.tckw      tensor bundles (weights, probe outputs)
  blobs/<sha256>.tckt      masks (see mask_store)
  runs/<task>/seed-<s>/run-<r>.json
  plan.json                plan + fingerprint + run index (written by the runner)

TCKW tensor bundle, big-endian:
  b"TCKW"  u16 version  u32 array_count
  per array: u16 name_len, name, u8 ndim, ndim x u32 dims, prod(dims) x f64
Arrays are written in sorted name order so equal content gives equal bytes.
"""

from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import orjson

from app.models.dto import NetworkConfig, PruneSchedule, SeedPolicy
from app.nn.params import Mask, Weights
from app.services.pruning import RunRecord
from app.utils.hashing import bytes_sha256
from parsers.base import ParseError, SchemaError, VersionMismatchError

from .mask_store import decode_mask, encode_mask

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"TCKW"
BUNDLE_VERSION = 1
MANIFEST_FORMAT = "ticketlab-run"
MANIFEST_VERSION = 1

PathLike = Union[str, Path]


class BlobHashMismatchError(SchemaError):
    def __init__(self, path: Path, expected: str, actual: str) -> None:
        self.path = path
        self.expected = expected
        self.actual = actual
        super().__init__(f"blob {path.name}: content hash {actual} != {expected}")


class BundleFormatError(ParseError):
    pass


# ------------------------ Tensor bundles ------------------------

def encode_bundle(arrays: Dict[str, np.ndarray]) -> bytes:
    out = [BUNDLE_MAGIC, struct.pack(">HI", BUNDLE_VERSION, len(arrays))]
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack(">H", len(raw)) + raw)
        out.append(struct.pack(">B", a.ndim) + struct.pack(f">{a.ndim}I", *a.shape))
        out.append(a.astype(">f8").tobytes())
    return b"".join(out)


def decode_bundle(data: bytes) -> Dict[str, np.ndarray]:
    pos = 0

    def take(size: int, what: str) -> bytes:
        nonlocal pos
        if pos + size > len(data):
            raise BundleFormatError(f"truncated {what}", offset=pos, expected=size, actual=len(data) - pos)
        chunk = data[pos:pos + size]
        pos += size
        return chunk

    magic = take(4, "magic")
    if magic != BUNDLE_MAGIC:
        raise BundleFormatError("bad bundle magic", offset=0, expected=BUNDLE_MAGIC, actual=magic)
    version, count = struct.unpack(">HI", take(6, "header"))
    if version != BUNDLE_VERSION:
        raise VersionMismatchError("TCKW", BUNDLE_VERSION, version)

    arrays: Dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack(">H", take(2, f"array {i} name length"))
        name = take(name_len, f"array {i} name").decode("utf-8")
        (ndim,) = struct.unpack(">B", take(1, f"{name} ndim"))
        dims = struct.unpack(f">{ndim}I", take(4 * ndim, f"{name} dims"))
        values = np.frombuffer(take(8 * math.prod(dims), f"{name} values"), dtype=">f8")
        arrays[name] = values.astype(np.float64).reshape(dims)
    if pos != len(data):
        raise BundleFormatError("trailing bytes after last array", offset=pos, expected=pos, actual=len(data))
    return arrays


# ------------------------ Blob store ------------------------

class BlobStore:
    """Content-addressed files under <root>/blobs; identical content is stored once."""

    def __init__(self, root: PathLike) -> None:
        self.dir = Path(root) / "blobs"

    def put(self, data: bytes, ext: str) -> str:
        digest = bytes_sha256(data)
        path = self.dir / f"{digest}.{ext}"
        if not path.exists():
            self.dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".{ext}.tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return digest

    def get(self, digest: str, ext: str) -> bytes:
        path = self.dir / f"{digest}.{ext}"
        if not path.is_file():
            raise FileNotFoundError(f"Blob not found: {path}")
        data = path.read_bytes()
        actual = bytes_sha256(data)
        if actual != digest:
            raise BlobHashMismatchError(path, digest, actual)
        return data

    def put_weights(self, weights: Weights) -> str:
        return self.put(encode_bundle(weights.as_arrays()), "tckw")

    def get_weights(self, digest: str, config: NetworkConfig) -> Weights:
        return Weights.from_arrays(config, decode_bundle(self.get(digest, "tckw")))

    def put_mask(self, mask: Mask) -> str:
        return self.put(encode_mask(mask), "tckt")

    def get_mask(self, digest: str) -> Mask:
        return decode_mask(self.get(digest, "tckt"))

    def put_outputs(self, probs: np.ndarray) -> str:
        return self.put(encode_bundle({"probs": probs}), "tckw")

    def get_outputs(self, digest: str) -> np.ndarray:
        arrays = decode_bundle(self.get(digest, "tckw"))
        if "probs" not in arrays:
            raise SchemaError(f"blob {digest} holds no probe outputs")
        return arrays["probs"]


# ------------------------ Manifests ------------------------

def dump_json(obj: Any) -> bytes:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY)


def manifest_path(root: PathLike, task: str, seed: int, run_id: int) -> Path:
    return Path(root) / "runs" / task / f"seed-{seed}" / f"run-{run_id}.json"


def write_run_record(record: RunRecord, root: PathLike, plan_fingerprint: Optional[str] = None) -> Path:
    store = BlobStore(root)
    init_blob = store.put_weights(record.init_weights)
    steps = []
    for k, (mask, acc, trained, probs) in enumerate(
        zip(record.masks, record.accuracies, record.trained, record.probe_outputs)
    ):
        steps.append({
            "step": k,
            "pruned_pct": record.schedule.percentages[k],
            "accuracy": acc,
            "tau": mask.tau,
            "mask_blob": store.put_mask(mask),
            "weights_blob": store.put_weights(trained),
            "probe_blob": store.put_outputs(probs),
        })

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "task": record.task,
        "seed": record.seed,
        "run_id": record.run_id,
        "regime": record.policy.regime_name,
        "policy": record.policy.model_dump(mode="json"),
        "config": record.config.model_dump(mode="json"),
        "schedule": list(record.schedule.percentages),
        "init_hash": record.init_hash,
        "init_blob": init_blob,
        "dense_accuracy": record.dense_accuracy,
        "steps": steps,
        "plan_fingerprint": plan_fingerprint,
    }
    path = manifest_path(root, record.task, record.seed, record.run_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_json(manifest))
    return path


def read_run_record(path: PathLike, root: Optional[PathLike] = None) -> RunRecord:
    """`root` defaults to the directory three levels above the manifest."""
    p = Path(path)
    try:
        m = orjson.loads(p.read_bytes())
    except orjson.JSONDecodeError as e:
        raise SchemaError(f"{p}: invalid JSON: {e}") from e
    if not isinstance(m, dict) or m.get("format") != MANIFEST_FORMAT:
        raise SchemaError(f"{p}: not a run manifest")
    if m.get("version") != MANIFEST_VERSION:
        raise VersionMismatchError("run manifest", MANIFEST_VERSION, m.get("version"))

    store = BlobStore(root if root is not None else p.parents[3])
    try:
        config = NetworkConfig.model_validate(m["config"])
        policy = SeedPolicy.model_validate(m["policy"])
        schedule = PruneSchedule(percentages=tuple(m["schedule"]))
        init_weights = store.get_weights(m["init_blob"], config)
        steps = m["steps"]
    except (KeyError, ValueError) as e:
        raise SchemaError(f"{p}: malformed manifest: {e}") from e

    if init_weights.digest() != m["init_hash"]:
        raise SchemaError(f"{p}: init weights digest differs from recorded init_hash")

    return RunRecord(
        seed=int(m["seed"]),
        run_id=int(m["run_id"]),
        task=str(m["task"]),
        policy=policy,
        config=config,
        schedule=schedule,
        init_weights=init_weights,
        init_hash=m["init_hash"],
        dense_accuracy=float(m["dense_accuracy"]),
        masks=tuple(store.get_mask(s["mask_blob"]) for s in steps),
        accuracies=tuple(float(s["accuracy"]) for s in steps),
        trained=tuple(store.get_weights(s["weights_blob"], config) for s in steps),
        probe_outputs=tuple(store.get_outputs(s["probe_blob"]) for s in steps),
    )


def list_manifests(root: PathLike) -> List[Path]:
    return sorted((Path(root) / "runs").glob("*/seed-*/run-*.json"))


def read_run_records(root: PathLike) -> List[RunRecord]:
    paths = list_manifests(root)
    if not paths:
        raise FileNotFoundError(f"No run manifests under {Path(root) / 'runs'}")
    records = [read_run_record(p, root) for p in paths]
    return sorted(records, key=lambda r: (r.task, r.seed, r.run_id))
