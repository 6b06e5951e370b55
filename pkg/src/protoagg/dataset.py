"""Labelled descriptor corpora: synthetic generation, file I/O, splits.

A dataset is a flat table of (descriptor, landmark id, keyframe id)
records with one shared descriptor width.  Synthetic corpora model each
landmark as a random canonical descriptor observed several times with
independent per-bit flip noise, spread across distinct keyframes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .descriptor import BinaryDescriptor, WORD_BITS, pack_bits, unpack_bits
from .errors import FormatError

DATASET_MAGIC = b"PDSC"
DATASET_VERSION = 1
_HEADER = "<4sHIQ"  # magic, version, width, record count
_HEADER_SIZE = struct.calcsize(_HEADER)


@dataclass(frozen=True)
class LabelledDescriptor:
    descriptor: BinaryDescriptor
    landmark_id: int
    keyframe_id: int


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic labelled-descriptor generator."""

    num_landmarks: int = 500
    num_keyframes: int = 200
    observations_per_landmark: tuple[int, int] = (3, 15)
    bit_flip_prob: float = 0.05
    width: int = 512
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.observations_per_landmark
        if lo < 1 or hi < lo:
            raise ValueError(f"observations_per_landmark range {lo}..{hi} is empty or invalid")
        if not 0.0 <= self.bit_flip_prob < 0.5:
            raise ValueError(
                f"bit_flip_prob must lie in [0, 0.5), got {self.bit_flip_prob} "
                "(at 0.5 and beyond observations no longer resemble their landmark)"
            )
        if self.num_landmarks < 1 or self.num_keyframes < 1:
            raise ValueError("num_landmarks and num_keyframes must be positive")
        if self.width < WORD_BITS or self.width % WORD_BITS != 0:
            raise ValueError(f"width must be a positive multiple of {WORD_BITS}")


class LabelledDataset:
    """Immutable collection of labelled descriptors, stored packed."""

    def __init__(self, words: np.ndarray, landmark_ids: np.ndarray,
                 keyframe_ids: np.ndarray, width: int):
        if width < WORD_BITS or width % WORD_BITS != 0:
            raise FormatError(f"descriptor width {width} is not a positive multiple of {WORD_BITS}")
        words = np.ascontiguousarray(words, dtype=np.uint64)
        landmark_ids = np.ascontiguousarray(landmark_ids, dtype=np.uint64)
        keyframe_ids = np.ascontiguousarray(keyframe_ids, dtype=np.uint64)
        n = len(landmark_ids)
        if words.shape != (n, width // WORD_BITS) or keyframe_ids.shape != (n,):
            raise ValueError("words, landmark_ids and keyframe_ids are inconsistent")
        if n:
            pairs = np.stack([landmark_ids, keyframe_ids], axis=1)
            if len(np.unique(pairs, axis=0)) != n:
                raise ValueError("a (landmark, keyframe) pair appears more than once")
        self.words = words
        self.landmark_ids = landmark_ids
        self.keyframe_ids = keyframe_ids
        self.width = width
        self._landmark_csr = None
        self._keyframe_csr = None

    def __len__(self) -> int:
        return len(self.landmark_ids)

    def descriptor(self, row: int) -> BinaryDescriptor:
        return BinaryDescriptor(self.words[row].copy(), self.width)

    def record(self, row: int) -> LabelledDescriptor:
        return LabelledDescriptor(
            self.descriptor(row), int(self.landmark_ids[row]), int(self.keyframe_ids[row])
        )

    @classmethod
    def from_records(cls, records, width: int) -> "LabelledDataset":
        records = list(records)
        w = width // WORD_BITS
        words = np.zeros((len(records), w), dtype=np.uint64)
        lms = np.zeros(len(records), dtype=np.uint64)
        kfs = np.zeros(len(records), dtype=np.uint64)
        for i, rec in enumerate(records):
            if rec.descriptor.width != width:
                raise FormatError(
                    f"record {i} has width {rec.descriptor.width}, dataset width is {width}"
                )
            words[i] = rec.descriptor.words
            lms[i] = rec.landmark_id
            kfs[i] = rec.keyframe_id
        return cls(words, lms, kfs, width)

    def _csr(self, keys: np.ndarray):
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        ids, starts = np.unique(sorted_keys, return_index=True)
        offsets = np.append(starts, len(keys))
        return ids, offsets, order

    def landmark_csr(self):
        """(landmark ids, group offsets, row indices) with rows of
        landmark ids[i] at rows[offsets[i]:offsets[i+1]]."""
        if self._landmark_csr is None:
            self._landmark_csr = self._csr(self.landmark_ids)
        return self._landmark_csr

    def keyframe_csr(self):
        if self._keyframe_csr is None:
            self._keyframe_csr = self._csr(self.keyframe_ids)
        return self._keyframe_csr

    def landmarks(self) -> np.ndarray:
        return self.landmark_csr()[0]

    def keyframes(self) -> np.ndarray:
        return self.keyframe_csr()[0]

    def rows_for_landmark(self, landmark_id: int) -> np.ndarray:
        ids, offsets, rows = self.landmark_csr()
        i = np.searchsorted(ids, landmark_id)
        if i == len(ids) or ids[i] != landmark_id:
            raise KeyError(f"landmark {landmark_id} not in dataset")
        return rows[offsets[i]: offsets[i + 1]]

    def select_rows(self, rows: np.ndarray) -> "LabelledDataset":
        return LabelledDataset(
            self.words[rows], self.landmark_ids[rows], self.keyframe_ids[rows], self.width
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelledDataset):
            return NotImplemented
        return (
            self.width == other.width
            and np.array_equal(self.words, other.words)
            and np.array_equal(self.landmark_ids, other.landmark_ids)
            and np.array_equal(self.keyframe_ids, other.keyframe_ids)
        )


def generate_synthetic(cfg: SynthConfig) -> LabelledDataset:
    """Generate a labelled corpus per the noisy-canonical-descriptor model.

    Each landmark draws a uniform random canonical descriptor; every
    observation flips each canonical bit independently with probability
    bit_flip_prob and lands in a distinct uniformly chosen keyframe.
    Deterministic for a fixed seed.
    """
    lo, hi = cfg.observations_per_landmark
    if hi > cfg.num_keyframes:
        raise ValueError(
            f"observations_per_landmark max {hi} exceeds num_keyframes {cfg.num_keyframes}; "
            "observations of one landmark must land in distinct keyframes"
        )
    rng = np.random.default_rng(cfg.seed)
    w = cfg.width // WORD_BITS
    counts = rng.integers(lo, hi + 1, size=cfg.num_landmarks)
    total = int(counts.sum())
    words = np.empty((total, w), dtype=np.uint64)
    landmark_ids = np.repeat(np.arange(cfg.num_landmarks, dtype=np.uint64), counts)
    keyframe_ids = np.empty(total, dtype=np.uint64)
    row = 0
    for lm in range(cfg.num_landmarks):
        n = int(counts[lm])
        canonical = rng.integers(0, 1 << 64, size=w, dtype=np.uint64)
        flips = rng.random((n, cfg.width)) < cfg.bit_flip_prob
        words[row: row + n] = np.bitwise_xor(canonical, pack_bits(flips))
        keyframe_ids[row: row + n] = rng.choice(cfg.num_keyframes, size=n, replace=False)
        row += n
    return LabelledDataset(words, landmark_ids, keyframe_ids, cfg.width)


def save_dataset(dataset: LabelledDataset, path) -> None:
    """Write the fixed-width binary container (little-endian throughout)."""
    n = len(dataset)
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADER, DATASET_MAGIC, DATASET_VERSION, dataset.width, n))
        if n:
            w = dataset.words.shape[1]
            rec = np.dtype([("lm", "<u8"), ("kf", "<u8"), ("words", "<u8", (w,))])
            table = np.empty(n, dtype=rec)
            table["lm"] = dataset.landmark_ids
            table["kf"] = dataset.keyframe_ids
            table["words"] = dataset.words
            f.write(table.tobytes())


def load_dataset(path) -> LabelledDataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic, not a descriptor dataset")
    if len(data) < _HEADER_SIZE:
        raise FormatError(f"{path}: truncated header")
    _, version, width, n = struct.unpack_from(_HEADER, data, 0)
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if width < WORD_BITS or width % WORD_BITS != 0:
        raise FormatError(f"{path}: descriptor width {width} is not a multiple of {WORD_BITS}")
    w = width // WORD_BITS
    rec = np.dtype([("lm", "<u8"), ("kf", "<u8"), ("words", "<u8", (w,))])
    expected = _HEADER_SIZE + n * rec.itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: file size {len(data)} does not match header "
            f"({n} records of {rec.itemsize} bytes expected, {expected} total)"
        )
    table = np.frombuffer(data, dtype=rec, count=n, offset=_HEADER_SIZE)
    return LabelledDataset(
        table["words"].astype(np.uint64).reshape(n, w),
        table["lm"].astype(np.uint64),
        table["kf"].astype(np.uint64),
        width,
    )


def export_text(dataset: LabelledDataset, path) -> None:
    """One record per line: landmark id, keyframe id, hex-encoded descriptor."""
    with open(path, "w", encoding="ascii") as f:
        for i in range(len(dataset)):
            hexdesc = dataset.words[i].astype("<u8").tobytes().hex()
            f.write(f"{dataset.landmark_ids[i]} {dataset.keyframe_ids[i]} {hexdesc}\n")


def import_text(path) -> LabelledDataset:
    """Parse the plain-text interchange format written by export_text.

    Fields may be separated by whitespace or commas; blank lines and
    lines starting with '#' are skipped.  The descriptor width is taken
    from the first record.
    """
    records = []
    width = None
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                lm, kf = int(parts[0]), int(parts[1])
                raw = bytes.fromhex(parts[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if width is None:
                width = len(raw) * 8
                if width == 0 or width % WORD_BITS != 0:
                    raise FormatError(
                        f"{path}:{lineno}: descriptor width {width} is not a multiple of {WORD_BITS}"
                    )
            elif len(raw) * 8 != width:
                raise FormatError(
                    f"{path}:{lineno}: descriptor width {len(raw) * 8} differs from {width}"
                )
            records.append(LabelledDescriptor(BinaryDescriptor.from_bytes(raw, width), lm, kf))
    if width is None:
        raise FormatError(f"{path}: no records found")
    return LabelledDataset.from_records(records, width)


def split_by_keyframe(dataset: LabelledDataset, support_fraction: float, seed: int):
    """Partition whole keyframes into a support and a query dataset.

    round(support_fraction * num_keyframes) uniformly chosen keyframes
    (at least 1, at most all but 1) form the support half; every record
    follows its keyframe.  Deterministic for a fixed seed.
    """
    if not 0.0 < support_fraction < 1.0:
        raise ValueError(f"support_fraction must lie in (0, 1), got {support_fraction}")
    frames = dataset.keyframes()
    if len(frames) < 2:
        raise ValueError(f"cannot split a dataset with {len(frames)} keyframe(s)")
    n_support = int(np.floor(support_fraction * len(frames) + 0.5))
    n_support = min(max(n_support, 1), len(frames) - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(frames))
    support_frames = frames[perm[:n_support]]
    mask = np.isin(dataset.keyframe_ids, support_frames)
    return (
        dataset.select_rows(np.flatnonzero(mask)),
        dataset.select_rows(np.flatnonzero(~mask)),
    )
