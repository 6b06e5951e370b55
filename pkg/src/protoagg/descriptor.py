"""Packed binary feature descriptors and their bit-level kernels.

A descriptor is a fixed-width bit vector (512 bits by default) packed
into 64-bit words, little-endian within the word array: bit j lives in
word j // 64 at position j % 64.  This layout makes Hamming distance a
XOR + popcount and gives a byte-exact file representation.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError

WORD_BITS = 64

_popcount_table = None


def _require_width(width: int) -> None:
    if width <= 0 or width % WORD_BITS != 0:
        raise ValueError(f"descriptor width must be a positive multiple of {WORD_BITS}, got {width}")


def popcount(words: np.ndarray) -> np.ndarray:
    """Per-element population count of a uint64 array."""
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(words)
    # numpy < 2.0: count set bits per byte through a 256-entry table
    global _popcount_table
    if _popcount_table is None:
        _popcount_table = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)
    as_bytes = np.ascontiguousarray(words).view(np.uint8)
    counts = _popcount_table[as_bytes].reshape(words.shape + (8,))
    return counts.sum(axis=-1, dtype=np.int64)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a {0,1} array of shape (..., width) into uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    width = bits.shape[-1]
    _require_width(width)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64)


def unpack_bits(words: np.ndarray, width: int) -> np.ndarray:
    """Unpack uint64 words of shape (..., width/64) back to a {0,1} uint8 array."""
    _require_width(width)
    as_bytes = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :width]


def words_per_descriptor(width: int) -> int:
    _require_width(width)
    return width // WORD_BITS


class BinaryDescriptor:
    """Immutable fixed-width packed bit vector."""

    __slots__ = ("words", "width")

    def __init__(self, words: np.ndarray, width: int):
        _require_width(width)
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.shape != (width // WORD_BITS,):
            raise ValueError(
                f"expected {width // WORD_BITS} words for width {width}, got shape {words.shape}"
            )
        words.flags.writeable = False
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "width", width)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryDescriptor is immutable")

    @classmethod
    def from_bits(cls, bits) -> "BinaryDescriptor":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("from_bits expects a 1-d {0,1} sequence")
        return cls(pack_bits(bits), len(bits))

    @classmethod
    def from_bytes(cls, data: bytes, width: int) -> "BinaryDescriptor":
        _require_width(width)
        if len(data) != width // 8:
            raise ValueError(f"expected {width // 8} bytes for width {width}, got {len(data)}")
        words = np.frombuffer(data, dtype="<u8").astype(np.uint64)
        return cls(words, width)

    @classmethod
    def zeros(cls, width: int) -> "BinaryDescriptor":
        return cls(np.zeros(width // WORD_BITS, dtype=np.uint64), width)

    @classmethod
    def ones(cls, width: int) -> "BinaryDescriptor":
        return cls(np.full(width // WORD_BITS, np.uint64(0xFFFFFFFFFFFFFFFF)), width)

    @classmethod
    def random(cls, width: int, rng: np.random.Generator) -> "BinaryDescriptor":
        _require_width(width)
        words = rng.integers(0, 1 << 64, size=width // WORD_BITS, dtype=np.uint64)
        return cls(words, width)

    def bit(self, j: int) -> int:
        if not 0 <= j < self.width:
            raise IndexError(f"bit index {j} out of range for width {self.width}")
        return int((self.words[j // WORD_BITS] >> np.uint64(j % WORD_BITS)) & np.uint64(1))

    def to_bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.width)

    def to_real(self) -> np.ndarray:
        """Encode as a float64 vector with component j equal to bit j (0.0 or 1.0)."""
        return self.to_bits().astype(np.float64)

    def to_bytes(self) -> bytes:
        return self.words.astype("<u8").tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryDescriptor):
            return NotImplemented
        return self.width == other.width and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.width, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryDescriptor(width={self.width}, hex={self.to_bytes().hex()})"


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    """Number of differing bit positions between two descriptors."""
    if a.width != b.width:
        raise DimensionMismatchError(f"descriptor widths differ: {a.width} vs {b.width}")
    return int(popcount(np.bitwise_xor(a.words, b.words)).sum())


def hamming_to_many(query_words: np.ndarray, item_words: np.ndarray) -> np.ndarray:
    """Hamming distances from one packed descriptor to each row of a packed matrix."""
    query_words = np.asarray(query_words, dtype=np.uint64)
    item_words = np.asarray(item_words, dtype=np.uint64)
    if item_words.shape[-1] != query_words.shape[-1]:
        raise DimensionMismatchError(
            f"word counts differ: {query_words.shape[-1]} vs {item_words.shape[-1]}"
        )
    return popcount(np.bitwise_xor(item_words, query_words)).sum(axis=-1, dtype=np.int64)


def unpack_to_real(words: np.ndarray, width: int) -> np.ndarray:
    """Batch {0,1} float64 encoding of packed descriptors, shape (..., width)."""
    return unpack_bits(words, width).astype(np.float64)
