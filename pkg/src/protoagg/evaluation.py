"""Nearest-neighbour search precision benchmark.

The protocol simulates one matching step of an incremental mapping
pipeline: keyframes are split into a support set (frames already
processed, from which one matching unit per landmark is built) and a
query set (newly arrived frames).  Sampled query descriptors are
matched to their nearest unit and a match counts as correct when the
unit belongs to the descriptor's own landmark.  Precision is the
fraction of correct matches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .baselines import PcaModel, pca_fit_words, pca_project, quantized_mean_words
from .dataset import LabelledDataset
from .descriptor import unpack_to_real
from .errors import DimensionMismatchError
from .network import EmbeddingNetwork, MlpArchitecture
from .search import ExactEuclideanIndex, ExactHammingIndex, RandomizedForestIndex
from .seeding import derive_seed
from .training import TrainConfig, train

_EMBED_CHUNK = 4096


@dataclass(frozen=True)
class EvalConfig:
    support_fraction: float = 0.9
    num_query_samples: int = 10_000
    seed: int = 0
    use_ann: bool = False
    ann_budget: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.support_fraction < 1.0:
            raise ValueError("support_fraction must lie in (0, 1)")
        if self.num_query_samples < 1:
            raise ValueError("num_query_samples must be >= 1")


@dataclass(frozen=True)
class Unaggregated:
    """Reference method: keep every raw support descriptor, match in Hamming space."""

    name: str = "unaggregated"


@dataclass(frozen=True)
class EmbeddingPrototypes:
    """Per-landmark mean of learned embeddings, matched in Euclidean space."""

    network: EmbeddingNetwork
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"prototypes-{self.network.output_dim}d")


@dataclass(frozen=True)
class QuantizedMean:
    """Per-landmark per-bit majority descriptor, matched in Hamming space."""

    name: str = "quantized-mean"


@dataclass(frozen=True)
class PcaMean:
    """Per-landmark mean of PCA projections, matched in Euclidean space."""

    num_components: int = 16
    sample_size: int = 100_000
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"pca-{self.num_components}d-mean")


@dataclass(frozen=True)
class RandomSample:
    """Per-landmark single random raw descriptor, matched in Hamming space."""

    name: str = "random-sample"


Method = Union[Unaggregated, EmbeddingPrototypes, QuantizedMean, PcaMean, RandomSample]


@dataclass
class MethodResult:
    name: str
    precision: float
    correct: int
    attempted: int
    bytes_per_landmark: float
    build_seconds: float
    query_seconds_per_sample: float


@dataclass
class EvalReport:
    results: list
    num_support_records: int
    num_query_records: int
    num_landmarks: int
    sample_seed: int
    split_seed: Optional[int] = None
    extras: dict = field(default_factory=dict)


def embed_dataset_words(net: EmbeddingNetwork, words: np.ndarray, width: int) -> np.ndarray:
    """Embed packed descriptors in chunks; rows align with the input."""
    if net.input_dim != width:
        raise DimensionMismatchError(
            f"network expects {net.input_dim}-bit input, dataset width is {width}"
        )
    out = np.empty((len(words), net.output_dim))
    for lo in range(0, len(words), _EMBED_CHUNK):
        block = unpack_to_real(words[lo: lo + _EMBED_CHUNK], width)
        out[lo: lo + len(block)] = net.forward_batch(block)
    return out


def group_mean(values: np.ndarray, group_keys: np.ndarray):
    """(unique keys, per-key row means) via a stable sort and reduceat."""
    order = np.argsort(group_keys, kind="stable")
    sorted_keys = group_keys[order]
    ids, starts = np.unique(sorted_keys, return_index=True)
    sums = np.add.reduceat(values[order], starts, axis=0)
    counts = np.diff(np.append(starts, len(group_keys)))
    return ids, sums / counts[:, None]


def _sample_query_rows(support: LabelledDataset, query: LabelledDataset, cfg: EvalConfig):
    """Uniform (with replacement) sample of eligible query rows.

    A query descriptor is eligible when its landmark has at least one
    support observation; matching a landmark absent from the support
    side is structurally impossible and would measure the split, not
    the method.
    """
    support_landmarks = np.unique(support.landmark_ids)
    eligible = np.flatnonzero(np.isin(query.landmark_ids, support_landmarks))
    if len(eligible) == 0:
        raise ValueError("no eligible query descriptors: support and query share no landmark")
    rng = np.random.default_rng(cfg.seed)
    return eligible[rng.integers(0, len(eligible), size=cfg.num_query_samples)]


def _euclidean_matcher(vectors, ids, cfg: EvalConfig):
    if cfg.use_ann:
        index = RandomizedForestIndex(vectors, ids)

        def match(Q):
            budget = cfg.ann_budget if cfg.ann_budget is not None else 256
            return index.query_batch(Q, budget=budget)[0]
    else:
        index = ExactEuclideanIndex(vectors, ids)

        def match(Q):
            return index.query_batch(Q)[0]
    return match


def evaluate_method(method: Method, support: LabelledDataset, query: LabelledDataset,
                    cfg: EvalConfig, sampled_rows: Optional[np.ndarray] = None) -> MethodResult:
    """Build the method's matching units from the support set and measure
    nearest-neighbour precision on sampled query descriptors."""
    if sampled_rows is None:
        sampled_rows = _sample_query_rows(support, query, cfg)
    rows, inverse = np.unique(sampled_rows, return_inverse=True)
    sample_landmarks = query.landmark_ids[sampled_rows].astype(np.int64)
    width = support.width

    t_build = time.perf_counter()
    if isinstance(method, EmbeddingPrototypes):
        embeddings = embed_dataset_words(method.network, support.words, width)
        unit_ids, units = group_mean(embeddings, support.landmark_ids)
        dim = method.network.output_dim
        bytes_per_landmark = dim * 4 + 1
        binary_units = None
    elif isinstance(method, PcaMean):
        model = pca_fit_words(support.words, width, m=method.num_components,
                              seed=derive_seed(cfg.seed, "pca-fit"),
                              sample_size=method.sample_size)
        projections = pca_project(model, support.words)
        unit_ids, units = group_mean(projections, support.landmark_ids)
        bytes_per_landmark = method.num_components * 4 + 1
        binary_units = None
    elif isinstance(method, QuantizedMean):
        unit_ids, binary_units = _per_landmark_quantized_means(support)
        bytes_per_landmark = width // 8
        units = None
    elif isinstance(method, RandomSample):
        unit_ids, binary_units = _per_landmark_random_samples(
            support, np.random.default_rng(derive_seed(cfg.seed, "random-sample"))
        )
        bytes_per_landmark = width // 8
        units = None
    elif isinstance(method, Unaggregated):
        # every raw support descriptor is a unit; the index gets unique
        # row ids and matches map back to the row's landmark
        unit_ids = np.arange(len(support), dtype=np.int64)
        unit_landmarks = support.landmark_ids.astype(np.int64)
        binary_units = support.words
        bytes_per_landmark = (len(support) / len(np.unique(support.landmark_ids))) * (width // 8)
        units = None
    else:
        raise TypeError(f"unknown evaluation method: {method!r}")
    if not isinstance(method, Unaggregated):
        unit_landmarks = None
    build_seconds = time.perf_counter() - t_build

    t_query = time.perf_counter()
    if units is not None:
        if isinstance(method, EmbeddingPrototypes):
            Q = embed_dataset_words(method.network, query.words[rows], width)
        else:
            Q = pca_project(model, query.words[rows])
        match = _euclidean_matcher(units, unit_ids.astype(np.int64), cfg)
        matched = match(Q)
    else:
        index = ExactHammingIndex(binary_units, width, np.asarray(unit_ids, dtype=np.int64))
        matched = index.query_batch(query.words[rows])[0]
    if unit_landmarks is not None:
        matched = unit_landmarks[matched]
    query_seconds = time.perf_counter() - t_query

    matched_per_sample = matched[inverse]
    correct = int((matched_per_sample == sample_landmarks).sum())
    attempted = len(sampled_rows)
    return MethodResult(
        name=method.name,
        precision=correct / attempted,
        correct=correct,
        attempted=attempted,
        bytes_per_landmark=float(bytes_per_landmark),
        build_seconds=build_seconds,
        query_seconds_per_sample=query_seconds / attempted,
    )


def _per_landmark_quantized_means(support: LabelledDataset):
    ids, offsets, rows = support.landmark_csr()
    units = np.empty((len(ids), support.words.shape[1]), dtype=np.uint64)
    for i in range(len(ids)):
        group = rows[offsets[i]: offsets[i + 1]]
        units[i] = quantized_mean_words(support.words[group], support.width)
    return ids.astype(np.int64), units


def _per_landmark_random_samples(support: LabelledDataset, rng: np.random.Generator):
    ids, offsets, rows = support.landmark_csr()
    units = np.empty((len(ids), support.words.shape[1]), dtype=np.uint64)
    for i in range(len(ids)):
        group = rows[offsets[i]: offsets[i + 1]]
        units[i] = support.words[group[int(rng.integers(0, len(group)))]]
    return ids.astype(np.int64), units


def benchmark_table(support: LabelledDataset, query: LabelledDataset,
                    net32: EmbeddingNetwork, net16: EmbeddingNetwork,
                    cfg: EvalConfig) -> EvalReport:
    """The six-method comparison on one shared split and query sample:
    unaggregated, 32-dim prototypes, 16-dim prototypes, quantized mean,
    PCA-16 mean, random sample."""
    sampled_rows = _sample_query_rows(support, query, cfg)
    methods = [
        Unaggregated(),
        EmbeddingPrototypes(net32),
        EmbeddingPrototypes(net16),
        QuantizedMean(),
        PcaMean(num_components=16),
        RandomSample(),
    ]
    results = [evaluate_method(m, support, query, cfg, sampled_rows) for m in methods]
    return EvalReport(
        results=results,
        num_support_records=len(support),
        num_query_records=len(query),
        num_landmarks=len(np.unique(support.landmark_ids)),
        sample_seed=cfg.seed,
    )


def dimension_sweep(train_set: LabelledDataset, val_set: LabelledDataset,
                    support: LabelledDataset, query: LabelledDataset,
                    dims: list[int], train_cfg: TrainConfig, cfg: EvalConfig,
                    family: str = "funnel", num_layers: int = 3):
    """Train one triplet network per output dimension and evaluate each.

    Returns [(dim, precision)] in the order given.
    """
    if not dims:
        raise ValueError("dims must be nonempty")
    sampled_rows = _sample_query_rows(support, query, cfg)
    out = []
    for dim in dims:
        arch = MlpArchitecture(family, num_layers, train_set.width, dim)
        net, _ = train(train_set, val_set, arch, train_cfg)
        result = evaluate_method(EmbeddingPrototypes(net), support, query, cfg, sampled_rows)
        out.append((dim, result.precision))
    return out


def architecture_sweep(train_set: LabelledDataset, val_set: LabelledDataset,
                       support: LabelledDataset, query: LabelledDataset,
                       families: list[str], depths: list[int], losses: list,
                       train_cfg: TrainConfig, cfg: EvalConfig, output_dim: int = 16):
    """Grid over (family, depth, loss); returns records of
    (family, depth, loss name, precision)."""
    sampled_rows = _sample_query_rows(support, query, cfg)
    records = []
    for family in families:
        for depth in depths:
            for loss in losses:
                arch = MlpArchitecture(family, depth, train_set.width, output_dim)
                net, _ = train(train_set, val_set, arch, replace(train_cfg, loss=loss))
                result = evaluate_method(
                    EmbeddingPrototypes(net), support, query, cfg, sampled_rows
                )
                loss_name = type(loss).__name__.replace("Loss", "").lower()
                records.append((family, depth, loss_name, result.precision))
    return records


def format_report_table(report: EvalReport) -> str:
    """Aligned text table of the deterministic per-method results."""
    header = f"{'method':<24}{'precision':>10}{'samples':>9}{'bytes/landmark':>16}"
    lines = [header, "-" * len(header)]
    for r in report.results:
        lines.append(
            f"{r.name:<24}{r.precision:>10.4f}{r.attempted:>9}{r.bytes_per_landmark:>16.1f}"
        )
    lines.append("")
    lines.append(
        f"landmarks={report.num_landmarks} support_records={report.num_support_records} "
        f"query_records={report.num_query_records} sample_seed={report.sample_seed}"
        + (f" split_seed={report.split_seed}" if report.split_seed is not None else "")
    )
    return "\n".join(lines) + "\n"


def format_report_records(report: EvalReport) -> str:
    """Machine-readable line-delimited records.

    Timing fields are deliberately left out so reruns with an identical
    configuration produce byte-identical report files; timings go to
    format_timings (stdout candidates, not artifacts).
    """
    lines = []
    for r in report.results:
        lines.append(
            f"method={r.name}\tprecision={r.precision!r}\tcorrect={r.correct}"
            f"\tattempted={r.attempted}\tbytes_per_landmark={r.bytes_per_landmark!r}"
            f"\tsample_seed={report.sample_seed}"
            + (f"\tsplit_seed={report.split_seed}" if report.split_seed is not None else "")
        )
    return "\n".join(lines) + "\n"


def format_timings(report: EvalReport) -> str:
    lines = []
    for r in report.results:
        lines.append(
            f"method={r.name}\tbuild_seconds={r.build_seconds:.3f}"
            f"\tquery_us_per_sample={r.query_seconds_per_sample * 1e6:.1f}"
        )
    return "\n".join(lines) + "\n"
