"""Load, validate, save, and slice embedding datasets.

File format (EMB1, little-endian regardless of host):

    bytes  0-3   magic ``EMB1``
    bytes  4-7   version, u32 (currently 1)
    bytes  8-11  dim, u32
    bytes 12-19  count, u64
    bytes 20-23  flags, u32 (bit 0: label block present)
    then count*dim f32 row-major
    then, if flag bit 0 is set, count u32 labels

Per-row metadata lives in a JSONL sidecar at ``<path>.meta.jsonl`` with one
object per row, in row order, keys ``row`` plus optional ``text``,
``class_name``, ``source``. Keeping the numeric payload separate from the
metadata leaves the binary file memory-mappable and language-neutral.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError, ValidationError

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIIQI")
FLAG_LABELS = 0x1
META_SUFFIX = ".meta.jsonl"
_META_KEYS = ("text", "class_name", "source")


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class vocabulary: index i names class_names[i]."""

    class_names: tuple[str, ...]

    def __init__(self, class_names):
        names = tuple(str(n) for n in class_names)
        if len(names) < 2:
            raise ValidationError(f"need at least 2 classes, got {len(names)}")
        if len(set(names)) != len(names):
            raise ValidationError("class names must be unique")
        if any(not n for n in names):
            raise ValidationError("class names must be non-empty")
        object.__setattr__(self, "class_names", names)

    @property
    def C(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable count x dim matrix of f32 rows with optional labels/meta.

    ``meta`` is a tuple of per-row dicts restricted to the sidecar keys;
    ``labels[i]`` is the class index of row i.
    """

    data: np.ndarray
    labels: np.ndarray | None = None
    meta: tuple[dict, ...] | None = None
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValidationError(f"data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValidationError("dim must be >= 1")
        bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
        if bad.size:
            raise ValidationError(f"non-finite value in row {int(bad[0])}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (data.shape[0],):
                raise ValidationError(
                    f"labels length {labels.shape} does not match count {data.shape[0]}"
                )
            if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
                raise ValidationError("labels must fit in u32")
            labels = labels.astype(np.uint32)
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

        if self.meta is not None:
            meta = tuple(dict(m) for m in self.meta)
            if len(meta) != data.shape[0]:
                raise ValidationError(
                    f"meta has {len(meta)} records for {data.shape[0]} rows"
                )
            for i, rec in enumerate(meta):
                unknown = set(rec) - set(_META_KEYS)
                if unknown:
                    raise ValidationError(f"meta row {i} has unknown keys {sorted(unknown)}")
            object.__setattr__(self, "meta", meta)
        object.__setattr__(self, "_checked", True)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def take(self, indices) -> "EmbeddingSet":
        """Row subset in the given index order; labels and meta follow."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingSet(
            data=self.data[idx],
            labels=None if self.labels is None else self.labels[idx],
            meta=None if self.meta is None else tuple(self.meta[int(i)] for i in idx),
        )

    def texts(self) -> list[str]:
        """Per-row text metadata; raises if any row lacks it."""
        if self.meta is None:
            raise ValidationError("set carries no metadata")
        out = []
        for i, rec in enumerate(self.meta):
            if "text" not in rec:
                raise ValidationError(f"meta row {i} has no text")
            out.append(rec["text"])
        return out


def _meta_path(path) -> Path:
    return Path(str(path) + META_SUFFIX)


def load(path) -> EmbeddingSet:
    """Read an EMB1 file (and its sidecar, if present).

    The file size must match the header exactly; short payloads raise
    TruncationError, trailing bytes raise FormatError.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, version, dim, count, flags = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise ValidationError(f"{path}: dim must be >= 1, header says {dim}")
    has_labels = bool(flags & FLAG_LABELS)
    if flags & ~FLAG_LABELS:
        raise FormatError(f"{path}: unknown flag bits 0x{flags:x}")

    expected = HEADER.size + count * dim * 4 + (count * 4 if has_labels else 0)
    if len(blob) < expected:
        raise TruncationError(
            f"{path}: header declares {count}x{dim} rows"
            f" ({expected} bytes) but file has {len(blob)}"
        )
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes past the payload")

    off = HEADER.size
    data = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=off)
    data = data.reshape(count, dim).copy()
    off += count * dim * 4
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u4", count=count, offset=off).copy()

    meta = None
    mpath = _meta_path(path)
    if mpath.exists():
        meta = _load_meta(mpath, count)

    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise ValidationError(f"{path}: non-finite value in row {int(bad[0])}")
    return EmbeddingSet(data=data, labels=labels, meta=meta)


def _load_meta(mpath: Path, count: int) -> tuple[dict, ...]:
    records = []
    with open(mpath, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{mpath}:{lineno + 1}: bad JSON ({exc})") from exc
            if obj.get("row") != len(records):
                raise ValidationError(
                    f"{mpath}:{lineno + 1}: row key {obj.get('row')} out of order"
                )
            rec = {k: obj[k] for k in _META_KEYS if k in obj}
            unknown = set(obj) - set(_META_KEYS) - {"row"}
            if unknown:
                raise ValidationError(f"{mpath}:{lineno + 1}: unknown keys {sorted(unknown)}")
            records.append(rec)
    if len(records) != count:
        raise ValidationError(f"{mpath}: {len(records)} meta rows for {count} data rows")
    return tuple(records)


def save(es: EmbeddingSet, path) -> None:
    """Write EMB1 bytes; emits the sidecar only when the set carries meta.

    load(save(x)) round-trips bit-exactly on data, labels, and meta.
    """
    path = Path(path)
    flags = FLAG_LABELS if es.labels is not None else 0
    parts = [HEADER.pack(MAGIC, VERSION, es.dim, es.count, flags)]
    parts.append(np.ascontiguousarray(es.data, dtype="<f4").tobytes())
    if es.labels is not None:
        parts.append(np.ascontiguousarray(es.labels, dtype="<u4").tobytes())
    path.write_bytes(b"".join(parts))

    mpath = _meta_path(path)
    if es.meta is not None:
        with open(mpath, "w", encoding="utf-8") as fh:
            for i, rec in enumerate(es.meta):
                obj = {"row": i}
                for k in _META_KEYS:
                    if k in rec:
                        obj[k] = rec[k]
                fh.write(json.dumps(obj, separators=(",", ":"), ensure_ascii=False))
                fh.write("\n")
    elif mpath.exists():
        mpath.unlink()


def l2_normalize(es: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit Euclidean norm (computed in f64)."""
    norms = np.linalg.norm(es.data.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"cannot normalize all-zero row {int(zero[0])}")
    out = (es.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingSet(data=out, labels=es.labels, meta=es.meta)


def as_matrix(es: EmbeddingSet, normalize: bool = False) -> np.ndarray:
    """f64 copy of the rows, optionally unit-normalized; shared by fit/train/eval."""
    X = es.data.astype(np.float64)
    if normalize:
        norms = np.linalg.norm(X, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValidationError(f"cannot normalize all-zero row {int(zero[0])}")
        X /= norms[:, None]
    return X
