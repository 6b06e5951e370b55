"""Reference aggregation methods the learned prototypes are benchmarked against.

Three landmark summaries: a per-bit quantized mean (binary, not
incrementally updatable), the mean of a PCA projection of {0,1}-encoded
descriptors, and one uniformly sampled raw descriptor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .descriptor import BinaryDescriptor, pack_bits, unpack_bits, unpack_to_real
from .errors import DegenerateDataError, DimensionMismatchError, FormatError

PCA_MAGIC = b"PPCA"
PCA_VERSION = 1

_MAX_SWEEPS = 5000
_GUARD_VECTORS = 8


def _stack_words(descriptors):
    """Common width and packed (n, words) matrix of a descriptor sequence."""
    descriptors = list(descriptors)
    if not descriptors:
        raise ValueError("need at least one descriptor")
    width = descriptors[0].width
    for d in descriptors[1:]:
        if d.width != width:
            raise DimensionMismatchError(f"descriptor widths differ: {width} vs {d.width}")
    return width, np.stack([d.words for d in descriptors])


def quantized_mean_words(words: np.ndarray, width: int) -> np.ndarray:
    """Packed quantized mean of packed descriptor rows: bit j of the result
    is set iff the mean of bit j is >= 0.5 (exact ties round up)."""
    if words.ndim != 2 or words.shape[0] == 0:
        raise ValueError("need a nonempty (n, words) matrix")
    bits = unpack_bits(words, width)
    counts = bits.sum(axis=0, dtype=np.int64)
    majority = (2 * counts >= len(bits)).astype(np.uint8)  # integer-exact 0.5 threshold
    return pack_bits(majority)


def quantized_mean(descriptors) -> BinaryDescriptor:
    """Per-bit mean of the descriptors thresholded at 0.5.

    Unlike the real-valued prototype mean, this summary cannot be
    updated in place when a new descriptor arrives: multisets with
    equal quantized means can disagree after the same new descriptor
    is appended, because the per-bit tallies are lost.
    """
    width, words = _stack_words(descriptors)
    return BinaryDescriptor(quantized_mean_words(words, width), width)


def random_sample_prototype(descriptors, rng: np.random.Generator) -> BinaryDescriptor:
    """One uniformly chosen member of the list; deterministic for a fixed rng."""
    descriptors = list(descriptors)
    if not descriptors:
        raise ValueError("need at least one descriptor")
    return descriptors[int(rng.integers(0, len(descriptors)))]


@dataclass
class PcaModel:
    """Affine projection onto the top principal components of
    {0,1}-encoded descriptors.

    components has orthonormal rows (m, width); explained_variance is
    available on freshly fit models and None after loading from file
    (the serialized form stores only what applying the model needs).
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    @property
    def num_components(self) -> int:
        return self.components.shape[0]


def _subspace_change(q_new: np.ndarray, q_old: np.ndarray) -> float:
    """Sine of the largest principal angle between two orthonormal bases."""
    s = np.linalg.svd(q_new.T @ q_old, compute_uv=False)
    return float(np.sqrt(max(0.0, 1.0 - min(s) ** 2)))


def pca_fit(descriptors, m: int = 16, seed: int = 0,
            sample_size: int = 100_000, tol: float = 1e-8) -> PcaModel:
    """Fit on a descriptor sequence; see pca_fit_words."""
    width, words = _stack_words(descriptors)
    return pca_fit_words(words, width, m, seed, sample_size, tol)


def pca_fit_words(descriptor_words: np.ndarray, width: int, m: int = 16, seed: int = 0,
                  sample_size: int = 100_000, tol: float = 1e-8) -> PcaModel:
    """Top-m principal components by orthogonal (block power) iteration.

    The iteration runs a guarded block a little wider than m and stops
    once the spanned subspace moves by at most `tol` between sweeps; a
    Rayleigh-Ritz step then orders components by explained variance.
    Fitting uses at most sample_size rows (deterministically subsampled).
    """
    words = np.asarray(descriptor_words, dtype=np.uint64)
    if words.ndim != 2:
        raise ValueError("expected a packed (n, words) descriptor matrix")
    n = words.shape[0]
    if m < 1 or m > width:
        raise ValueError(f"component count m={m} must lie in [1, {width}]")
    if n <= m:
        raise ValueError(f"need more than m={m} descriptors to fit, got {n}")
    rng = np.random.default_rng(seed)
    if n > sample_size:
        keep = rng.choice(n, size=sample_size, replace=False)
        keep.sort()
        words = words[keep]
        n = sample_size

    X = unpack_to_real(words, width)
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / n
    total_var = float(np.trace(cov))
    if total_var <= 0.0:
        raise DegenerateDataError("zero variance: all descriptors in the sample are identical")

    block = min(m + _GUARD_VECTORS, width)
    Q = rng.standard_normal((width, block))
    Q, _ = np.linalg.qr(Q)
    for _ in range(_MAX_SWEEPS):
        Z = cov @ Q
        Q_new, _ = np.linalg.qr(Z)
        change = _subspace_change(Q_new[:, :m], Q[:, :m])
        Q = Q_new
        if change <= tol:
            break
    # Rayleigh-Ritz: rotate the block to eigenvector estimates, keep top m
    small = Q.T @ cov @ Q
    small = (small + small.T) / 2.0
    ritz_vals, ritz_vecs = np.linalg.eigh(small)
    order = np.argsort(ritz_vals)[::-1][:m]
    components = (Q @ ritz_vecs[:, order]).T
    variances = ritz_vals[order]
    return PcaModel(mean, np.ascontiguousarray(components), variances)


def pca_project(model: PcaModel, descriptor_words: np.ndarray) -> np.ndarray:
    """Project packed descriptors into the component space, shape (n, m)."""
    X = unpack_to_real(np.asarray(descriptor_words, dtype=np.uint64), model.width)
    return (X - model.mean) @ model.components.T


def pca_prototype(model: PcaModel, descriptors) -> np.ndarray:
    """Mean of the projections of a nonempty descriptor list."""
    width, words = _stack_words(descriptors)
    if width != model.width:
        raise DimensionMismatchError(f"descriptor width {width}, model width {model.width}")
    return pca_project(model, words).mean(axis=0)


def save_pca(model: PcaModel, path) -> None:
    """Magic, version, width, m, then mean and row-major projection as
    little-endian float64."""
    with open(path, "wb") as f:
        f.write(PCA_MAGIC)
        f.write(struct.pack("<HII", PCA_VERSION, model.width, model.num_components))
        f.write(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())


def load_pca(path) -> PcaModel:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != PCA_MAGIC:
        raise FormatError(f"{path}: bad magic, not a PCA model")
    try:
        version, width, m = struct.unpack_from("<HII", data, 4)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated PCA header") from exc
    if version != PCA_VERSION:
        raise FormatError(f"{path}: unsupported PCA version {version}")
    off = 4 + struct.calcsize("<HII")
    if len(data) != off + 8 * (width + m * width):
        raise FormatError(f"{path}: file size does not match width {width}, m {m}")
    mean = np.frombuffer(data, dtype="<f8", count=width, offset=off).astype(np.float64)
    off += 8 * width
    comps = np.frombuffer(data, dtype="<f8", count=m * width, offset=off)
    return PcaModel(mean, comps.reshape(m, width).astype(np.float64), None)
