"""Binary artifact formats: tensors, pooled-feature banks, teacher caches.

All formats are little-endian with a 4-byte magic and a u16 version.
Readers reject bad magics and truncated payloads with the byte offset of
the failure.

.ten  tensor          magic AETN, dtype u8 (0 = float32), rank u8, extents u32
.gsf  feature bank    magic AGSF, count u64, dim u32, records (id u64, floats)
.tk   teacher cache   magic ATKC, count u64, dim u32, n u8, records
                      (id u64, feature floats, distribution floats)
ckpt  checkpoint      sequence of (name length u16, name bytes, .ten body)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TEN_MAGIC = b"AETN"
GSF_MAGIC = b"AGSF"
TK_MAGIC = b"ATKC"
FORMAT_VERSION = 1
DTYPE_F32 = 0


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", self.pos)
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def _check_magic(reader, magic, kind):
    offset = reader.pos
    got = reader.take(len(magic), f"{kind} magic")
    if got != magic:
        raise FormatError(f"bad {kind} magic {got!r}, expected {magic!r}", offset)
    offset = reader.pos
    (version,) = reader.unpack("<H", f"{kind} version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {kind} version {version}", offset)


# -- .ten ---------------------------------------------------------------------


def tensor_to_bytes(array):
    array = np.asarray(array, dtype=np.float32)
    header = TEN_MAGIC + struct.pack("<HBB", FORMAT_VERSION, DTYPE_F32, array.ndim)
    extents = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array).astype("<f4").tobytes()
    return header + extents + payload


def tensor_from_reader(reader):
    _check_magic(reader, TEN_MAGIC, "tensor")
    offset = reader.pos
    dtype, rank = reader.unpack("<BB", "tensor dtype/rank")
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown tensor dtype code {dtype}", offset)
    shape = reader.unpack(f"<{rank}I", "tensor extents") if rank else ()
    count = int(np.prod(shape)) if shape else 1
    raw = reader.take(4 * count, "tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def write_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(array))


def read_tensor(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    array = tensor_from_reader(reader)
    if reader.pos != len(reader.blob):
        raise FormatError("trailing bytes after tensor payload", reader.pos)
    return array


# -- checkpoints ----------------------------------------------------------------


def write_checkpoint(path, named_arrays):
    with open(path, "wb") as fh:
        for name, array in named_arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(tensor_to_bytes(array))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    out = {}
    while reader.pos < len(reader.blob):
        (name_len,) = reader.unpack("<H", "checkpoint entry name length")
        name = reader.take(name_len, "checkpoint entry name").decode("utf-8")
        out[name] = tensor_from_reader(reader)
    return out


# -- .gsf feature banks ----------------------------------------------------------


@dataclass
class FeatureBank:
    ids: np.ndarray       # (count,) uint64
    features: np.ndarray  # (count, dim) float32

    def __post_init__(self):
        if self.ids.shape[0] != self.features.shape[0]:
            raise ValueError("feature bank id/feature count mismatch")

    @property
    def dim(self):
        return self.features.shape[1]

    def lookup(self, ids):
        index = {int(i): row for row, i in enumerate(self.ids)}
        try:
            rows = [index[int(i)] for i in ids]
        except KeyError as exc:
            raise KeyError(f"sample id {exc.args[0]} missing from feature bank") from exc
        return self.features[rows]


def write_feature_bank(path, bank):
    ids = np.asarray(bank.ids, dtype=np.uint64)
    feats = np.ascontiguousarray(bank.features, dtype=np.float32)
    count, dim = feats.shape
    with open(path, "wb") as fh:
        fh.write(GSF_MAGIC + struct.pack("<HQI", FORMAT_VERSION, count, dim))
        for i in range(count):
            fh.write(struct.pack("<Q", int(ids[i])))
            fh.write(feats[i].astype("<f4").tobytes())


def read_feature_bank(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_magic(reader, GSF_MAGIC, "feature bank")
    count, dim = reader.unpack("<QI", "feature bank header")
    ids = np.empty(count, dtype=np.uint64)
    feats = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        (ids[i],) = reader.unpack("<Q", f"record {i} id")
        raw = reader.take(4 * dim, f"record {i} features")
        feats[i] = np.frombuffer(raw, dtype="<f4")
    if reader.pos != len(reader.blob):
        raise FormatError("trailing bytes after feature bank records", reader.pos)
    return FeatureBank(ids=ids, features=feats)


# -- .tk teacher-knowledge caches --------------------------------------------------


@dataclass
class TeacherKnowledge:
    """Per-sample teacher supervision: aesthetic feature and prediction."""

    sample_id: int
    feature: np.ndarray       # (dim,) float32
    distribution: np.ndarray  # (n,) float32


def write_knowledge_cache(path, records):
    records = list(records)
    if records:
        dim = records[0].feature.shape[0]
        n = records[0].distribution.shape[0]
        for r in records:
            if r.feature.shape != (dim,) or r.distribution.shape != (n,):
                raise ValueError(
                    f"inhomogeneous cache record for sample {r.sample_id}: "
                    f"feature {r.feature.shape}, distribution {r.distribution.shape}"
                )
    else:
        dim, n = 0, 0
    if n > 255:
        raise ValueError(f"distribution length {n} does not fit the u8 header field")
    with open(path, "wb") as fh:
        fh.write(TK_MAGIC + struct.pack("<HQIB", FORMAT_VERSION, len(records), dim, n))
        for r in records:
            fh.write(struct.pack("<Q", int(r.sample_id)))
            fh.write(np.asarray(r.feature, dtype="<f4").tobytes())
            fh.write(np.asarray(r.distribution, dtype="<f4").tobytes())


def read_knowledge_cache(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_magic(reader, TK_MAGIC, "teacher cache")
    count, dim, n = reader.unpack("<QIB", "teacher cache header")
    records = []
    for i in range(count):
        (sample_id,) = reader.unpack("<Q", f"record {i} id")
        feat = np.frombuffer(reader.take(4 * dim, f"record {i} feature"), dtype="<f4")
        dist = np.frombuffer(reader.take(4 * n, f"record {i} distribution"), dtype="<f4")
        records.append(
            TeacherKnowledge(
                sample_id=int(sample_id),
                feature=feat.astype(np.float32),
                distribution=dist.astype(np.float32),
            )
        )
    if reader.pos != len(reader.blob):
        raise FormatError("trailing bytes after teacher cache records", reader.pos)
    return records
