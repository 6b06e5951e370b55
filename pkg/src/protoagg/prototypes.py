"""Per-landmark prototypes: batch initialization and exact streaming updates.

A prototype is the arithmetic mean of the real-valued embeddings of all
descriptors linked with one landmark, stored together with the number
of embeddings folded in.  Keeping that count makes the mean exactly
updatable one embedding at a time, which is the property binary
quantized means lack.  Counts are stored in one byte and saturate at
255; past saturation an update behaves as an exponential moving average
with weight 1/256.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, FormatError

COUNT_SATURATION = 255

STORE_MAGIC = b"PSTO"
STORE_VERSION = 1


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("prototype count must be >= 1")
        if self.count > COUNT_SATURATION:
            raise ValueError(f"prototype count saturates at {COUNT_SATURATION}")
        if not np.isfinite(self.vector).all():
            raise ValueError("prototype vector has non-finite components")


def init_prototype(embeddings) -> Prototype:
    """Mean of a nonempty batch of embeddings; count is the batch size
    (saturated at 255)."""
    E = np.asarray(embeddings, dtype=np.float64)
    if E.size == 0:
        raise ValueError("init_prototype needs a nonempty list of equal-length vectors")
    if E.ndim == 1:
        E = E[None, :]
    if E.ndim != 2:
        raise ValueError("init_prototype needs a nonempty list of equal-length vectors")
    return Prototype(E.mean(axis=0), min(E.shape[0], COUNT_SATURATION))


def update_prototype(p: Prototype, e) -> Prototype:
    """Fold one new embedding into the running mean.

    With n the stored count, the new vector is (n/(n+1))*old + (1/(n+1))*e,
    which keeps the vector equal to the batch mean of everything folded so
    far (until saturation, where n stays 255 and the update becomes an EMA).
    """
    e = np.asarray(e, dtype=np.float64)
    if e.shape != p.vector.shape:
        raise DimensionMismatchError(
            f"embedding shape {e.shape} does not match prototype {p.vector.shape}"
        )
    n = p.count
    vector = (n / (n + 1.0)) * p.vector + (1.0 / (n + 1.0)) * e
    return Prototype(vector, min(n + 1, COUNT_SATURATION))


class PrototypeStore:
    """Mapping landmark id -> Prototype, all sharing one dimension.

    Prototypes are immutable values, so concurrent readers are safe;
    updates to a single landmark must be serialized by the caller (the
    usual discipline: many readers, at most one writer per landmark).
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self._table: dict[int, Prototype] = {}

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, landmark_id: int) -> bool:
        return int(landmark_id) in self._table

    def add_landmark(self, landmark_id: int, embeddings) -> Prototype:
        landmark_id = int(landmark_id)
        if landmark_id in self._table:
            raise ValueError(f"landmark {landmark_id} already present")
        proto = init_prototype(embeddings)
        if proto.vector.shape != (self.dim,):
            raise DimensionMismatchError(
                f"embeddings of dimension {proto.vector.shape[0]}, store holds {self.dim}"
            )
        self._table[landmark_id] = proto
        return proto

    def get(self, landmark_id: int) -> Prototype:
        try:
            return self._table[int(landmark_id)]
        except KeyError:
            raise KeyError(f"landmark {landmark_id} not in store") from None

    def update(self, landmark_id: int, embedding) -> Prototype:
        proto = update_prototype(self.get(landmark_id), embedding)
        self._table[int(landmark_id)] = proto
        return proto

    def remove(self, landmark_id: int) -> None:
        try:
            del self._table[int(landmark_id)]
        except KeyError:
            raise KeyError(f"landmark {landmark_id} not in store") from None

    def landmark_ids(self) -> np.ndarray:
        return np.array(sorted(self._table), dtype=np.uint64)

    def as_matrix(self):
        """(ids, vectors, counts) sorted by landmark id, for search and I/O."""
        ids = self.landmark_ids()
        vectors = np.zeros((len(ids), self.dim))
        counts = np.zeros(len(ids), dtype=np.int64)
        for i, lm in enumerate(ids):
            proto = self._table[int(lm)]
            vectors[i] = proto.vector
            counts[i] = proto.count
        return ids, vectors, counts


@dataclass(frozen=True)
class MemoryReport:
    num_landmarks: int
    prototype_bytes_per_landmark: float
    raw_bytes_per_landmark: float
    total_prototype_bytes: int
    total_raw_bytes: int
    compression_ratio: float


def memory_report(store: PrototypeStore, descriptor_width_bits: int = 512,
                  stored_float_bytes: int = 4) -> MemoryReport:
    """Storage accounting: serialized prototype size (dim floats plus one
    count byte) against the raw packed descriptors the counts stand for."""
    n = len(store)
    proto_bytes = store.dim * stored_float_bytes + 1
    if n == 0:
        return MemoryReport(0, 0.0, 0.0, 0, 0, 0.0)
    _, _, counts = store.as_matrix()
    raw_total = int(counts.sum()) * (descriptor_width_bits // 8)
    proto_total = n * proto_bytes
    return MemoryReport(
        num_landmarks=n,
        prototype_bytes_per_landmark=float(proto_bytes),
        raw_bytes_per_landmark=raw_total / n,
        total_prototype_bytes=proto_total,
        total_raw_bytes=raw_total,
        compression_ratio=raw_total / proto_total,
    )


def save_store(store: PrototypeStore, path) -> None:
    """Records of (landmark id u64, count u8, dim little-endian float32)."""
    ids, vectors, counts = store.as_matrix()
    with open(path, "wb") as f:
        f.write(STORE_MAGIC)
        f.write(struct.pack("<HIQ", STORE_VERSION, store.dim, len(ids)))
        for i in range(len(ids)):
            f.write(struct.pack("<QB", int(ids[i]), int(counts[i])))
            f.write(vectors[i].astype("<f4").tobytes())


def load_store(path) -> PrototypeStore:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != STORE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a prototype store")
    try:
        version, dim, n = struct.unpack_from("<HIQ", data, 4)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated store header") from exc
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    off = 4 + struct.calcsize("<HIQ")
    rec_size = 9 + 4 * dim
    if len(data) != off + n * rec_size:
        raise FormatError(f"{path}: file size does not match {n} records of {rec_size} bytes")
    store = PrototypeStore(dim)
    for _ in range(n):
        lm, count = struct.unpack_from("<QB", data, off)
        off += 9
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        if lm in store:
            raise FormatError(f"{path}: duplicate landmark id {lm}")
        store._table[lm] = Prototype(vec, count)
    return store
