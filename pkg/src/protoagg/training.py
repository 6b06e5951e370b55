"""Metric-learning training loops for the embedding network.

Two losses are supported: a margin-based triplet ranking loss over
(anchor, positive, negative) descriptor triplets, and an episodic
prototype-classification loss (negative log softmax over distances from
query embeddings to class prototypes).  The loop runs mini-batch Adam
with reduce-on-plateau learning-rate scheduling and returns the weights
with the best validation loss seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dataset import LabelledDataset
from .descriptor import BinaryDescriptor, unpack_to_real
from .errors import DimensionMismatchError, TrainingDivergedError
from .network import EmbeddingNetwork, MlpArchitecture, adam_step, init_adam, init_network
from .seeding import derive_seed

_VALIDATION_BATCHES = 4


@dataclass(frozen=True)
class Triplet:
    """Anchor and positive share a landmark; the negative comes from another."""

    anchor: BinaryDescriptor
    positive: BinaryDescriptor
    negative: BinaryDescriptor


@dataclass(frozen=True)
class TripletLoss:
    margin: float = 0.5

    def __post_init__(self):
        if self.margin <= 0.0:
            raise ValueError("triplet margin must be positive")


@dataclass(frozen=True)
class PrototypicalLoss:
    classes_per_episode: int = 32
    support_per_class: int = 5
    query_per_class: int = 5
    squared_distance: bool = True

    def __post_init__(self):
        if self.support_per_class < 1 or self.query_per_class < 1:
            raise ValueError("support_per_class and query_per_class must be >= 1")
        if self.classes_per_episode < 1:
            raise ValueError("classes_per_episode must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    loss: Union[TripletLoss, PrototypicalLoss] = field(default_factory=TripletLoss)
    initial_lr: float = 0.001
    plateau_patience: int = 10
    lr_factor: float = 0.1
    min_lr: float = 1e-6
    max_epochs: int = 50
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.initial_lr <= 0.0 or self.min_lr <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class Episode:
    """One episodic training task: support/query descriptor blocks per class."""

    class_ids: np.ndarray          # (C,)
    support_words: np.ndarray      # (C, s, width/64) packed
    query_words: np.ndarray        # (C, q, width/64) packed
    width: int


def triplet_loss(ea, ep, en, margin: float):
    """Mean over the batch of max(|ea-ep| - |ea-en| + margin, 0).

    Accepts single embeddings of shape (k,) or batches of shape (n, k);
    distances are plain Euclidean norms.
    """
    loss, _, _, _ = triplet_loss_grad(ea, ep, en, margin)
    return loss


def triplet_loss_grad(ea, ep, en, margin: float):
    """Triplet loss plus its gradient w.r.t. each embedding batch."""
    if margin <= 0.0:
        raise ValueError("triplet margin must be positive")
    ea = np.atleast_2d(np.asarray(ea, dtype=np.float64))
    ep = np.atleast_2d(np.asarray(ep, dtype=np.float64))
    en = np.atleast_2d(np.asarray(en, dtype=np.float64))
    if ea.shape != ep.shape or ea.shape != en.shape:
        raise DimensionMismatchError(
            f"embedding shapes differ: {ea.shape}, {ep.shape}, {en.shape}"
        )
    n = ea.shape[0]
    vp = ea - ep
    vn = ea - en
    dp = np.sqrt(np.einsum("ij,ij->i", vp, vp))
    dn = np.sqrt(np.einsum("ij,ij->i", vn, vn))
    hinge = dp - dn + margin
    active = hinge > 0.0
    loss = float(np.maximum(hinge, 0.0).mean())

    # unit directions with a zero subgradient at coincident embeddings
    up = np.where(dp[:, None] > 0.0, vp / np.maximum(dp, np.finfo(float).tiny)[:, None], 0.0)
    un = np.where(dn[:, None] > 0.0, vn / np.maximum(dn, np.finfo(float).tiny)[:, None], 0.0)
    scale = active[:, None] / n
    dea = scale * (up - un)
    dep = -scale * up
    den = scale * un
    return loss, dea, dep, den


def prototypical_episode_loss(net: EmbeddingNetwork, episode: Episode,
                              squared_distance: bool = True) -> float:
    """Mean negative log-probability of the true class over the episode's
    query points, with class probabilities given by a softmax over negated
    distances from query embeddings to class prototypes (the per-class
    means of embedded support points)."""
    loss, _ = _episode_loss_core(net, episode, squared_distance, want_grads=False)
    return loss


def prototypical_loss_and_grads(net: EmbeddingNetwork, episode: Episode,
                                squared_distance: bool = True):
    """Episode loss plus gradients w.r.t. every network parameter."""
    return _episode_loss_core(net, episode, squared_distance, want_grads=True)


def _episode_loss_core(net, episode, squared_distance, want_grads):
    C, s = episode.support_words.shape[:2]
    q = episode.query_words.shape[1]
    if s < 1:
        raise ValueError("episode has an empty support set")
    if q < 1:
        raise ValueError("episode has an empty query set")
    Xs = unpack_to_real(episode.support_words.reshape(C * s, -1), episode.width)
    Xq = unpack_to_real(episode.query_words.reshape(C * q, -1), episode.width)
    X = np.concatenate([Xs, Xq])
    if want_grads:
        E, trace = net.forward_batch_trace(X)
    else:
        E = net.forward_batch(X)
    k = net.output_dim
    Es = E[: C * s].reshape(C, s, k)
    Eq = E[C * s:]
    protos = Es.mean(axis=1)

    diff = Eq[:, None, :] - protos[None, :, :]          # (Nq, C, k)
    d2 = np.einsum("ick,ick->ic", diff, diff)
    if squared_distance:
        logits = -d2
    else:
        logits = -np.sqrt(d2)
    labels = np.repeat(np.arange(C), q)

    shift = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shift).sum(axis=1))
    log_p = shift - log_z[:, None]
    nq = C * q
    loss = float(-log_p[np.arange(nq), labels].mean()) + 0.0  # avoid -0.0
    if not want_grads:
        return loss, None

    P = np.exp(log_p)
    dlogits = P.copy()
    dlogits[np.arange(nq), labels] -= 1.0
    dlogits /= nq
    if squared_distance:
        dd2 = -dlogits
    else:
        d = np.sqrt(np.maximum(d2, np.finfo(float).tiny))
        dd2 = -dlogits / (2.0 * d)
    # d2 = |q_i - c_c|^2: chain to query embeddings and prototypes
    row_sum = dd2.sum(axis=1)
    dEq = 2.0 * (row_sum[:, None] * Eq - dd2 @ protos)
    col_sum = dd2.sum(axis=0)
    dprotos = -2.0 * (dd2.T @ Eq - col_sum[:, None] * protos)
    dEs = np.repeat(dprotos[:, None, :] / s, s, axis=1).reshape(C * s, k)
    dE = np.concatenate([dEs, dEq])
    grads = net.backward(trace, dE)
    return loss, grads


def triplet_batch_grads(net: EmbeddingNetwork, anchor_words, positive_words,
                        negative_words, width: int, margin: float):
    """Triplet loss over a packed-descriptor batch plus network gradients."""
    Xa = unpack_to_real(anchor_words, width)
    Xp = unpack_to_real(positive_words, width)
    Xn = unpack_to_real(negative_words, width)
    n = Xa.shape[0]
    X = np.concatenate([Xa, Xp, Xn])
    E, trace = net.forward_batch_trace(X)
    loss, dea, dep, den = triplet_loss_grad(E[:n], E[n:2 * n], E[2 * n:], margin)
    dE = np.concatenate([dea, dep, den])
    grads = net.backward(trace, dE)
    return loss, grads


def _eligible_landmark_groups(dataset: LabelledDataset, min_size: int):
    ids, offsets, rows = dataset.landmark_csr()
    sizes = np.diff(offsets)
    keep = np.flatnonzero(sizes >= min_size)
    return ids, offsets, rows, sizes, keep


def sample_triplet_indices(dataset: LabelledDataset, count: int, rng: np.random.Generator):
    """Row indices of `count` sampled triplets, as three parallel arrays.

    The anchor landmark is drawn uniformly among landmarks with at least
    two observations, anchor and positive are two distinct observations
    of it, and the negative is a uniform observation of a different
    uniformly drawn eligible landmark.
    """
    ids, offsets, rows, sizes, eligible = _eligible_landmark_groups(dataset, 2)
    if len(eligible) < 2:
        raise ValueError(
            f"triplet sampling needs at least 2 landmarks with >= 2 observations, "
            f"found {len(eligible)}"
        )
    slot = rng.integers(0, len(eligible), size=count)
    neg_slot = rng.integers(0, len(eligible) - 1, size=count)
    neg_slot += neg_slot >= slot

    anc_lm = eligible[slot]
    neg_lm = eligible[neg_slot]
    anc_size = sizes[anc_lm]
    i = rng.integers(0, anc_size)
    j = rng.integers(0, anc_size - 1)
    j += j >= i
    neg_obs = rng.integers(0, sizes[neg_lm])
    anchor_rows = rows[offsets[anc_lm] + i]
    positive_rows = rows[offsets[anc_lm] + j]
    negative_rows = rows[offsets[neg_lm] + neg_obs]
    return anchor_rows, positive_rows, negative_rows


def sample_triplets(dataset: LabelledDataset, count: int, rng: np.random.Generator) -> list[Triplet]:
    """Materialized descriptor triplets; see sample_triplet_indices."""
    a, p, n = sample_triplet_indices(dataset, count, rng)
    return [
        Triplet(dataset.descriptor(ia), dataset.descriptor(ip), dataset.descriptor(ineg))
        for ia, ip, ineg in zip(a, p, n)
    ]


def sample_episode(dataset: LabelledDataset, loss: PrototypicalLoss,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode: up to classes_per_episode classes with enough
    observations, disjoint support and query sets within each class."""
    need = loss.support_per_class + loss.query_per_class
    ids, offsets, rows, sizes, eligible = _eligible_landmark_groups(dataset, need)
    if len(eligible) == 0:
        raise ValueError(
            f"no landmark has the {need} observations required per episode class"
        )
    n_classes = min(loss.classes_per_episode, len(eligible))
    chosen = eligible[rng.choice(len(eligible), size=n_classes, replace=False)]
    s, q = loss.support_per_class, loss.query_per_class
    w = dataset.words.shape[1]
    support = np.empty((n_classes, s, w), dtype=np.uint64)
    query = np.empty((n_classes, q, w), dtype=np.uint64)
    for c, lm in enumerate(chosen):
        group = rows[offsets[lm]: offsets[lm] + sizes[lm]]
        perm = rng.permutation(sizes[lm])[:need]
        support[c] = dataset.words[group[perm[:s]]]
        query[c] = dataset.words[group[perm[s:]]]
    return Episode(ids[chosen], support, query, dataset.width)


def _epoch_steps(dataset: LabelledDataset, batch_size: int) -> int:
    return max(1, len(dataset) // batch_size)


def _step_loss_and_grads(net, dataset, cfg, rng):
    if isinstance(cfg.loss, TripletLoss):
        a, p, n = sample_triplet_indices(dataset, cfg.batch_size, rng)
        return triplet_batch_grads(
            net, dataset.words[a], dataset.words[p], dataset.words[n],
            dataset.width, cfg.loss.margin,
        )
    episode = sample_episode(dataset, cfg.loss, rng)
    return prototypical_loss_and_grads(net, episode, cfg.loss.squared_distance)


def _validation_loss(net, batches, loss_cfg):
    total = 0.0
    if isinstance(loss_cfg, TripletLoss):
        for words_a, words_p, words_n, width in batches:
            Xa = unpack_to_real(words_a, width)
            Xp = unpack_to_real(words_p, width)
            Xn = unpack_to_real(words_n, width)
            n = Xa.shape[0]
            E = net.forward_batch(np.concatenate([Xa, Xp, Xn]))
            total += triplet_loss(E[:n], E[n:2 * n], E[2 * n:], loss_cfg.margin)
    else:
        for episode in batches:
            total += prototypical_episode_loss(net, episode, loss_cfg.squared_distance)
    return total / len(batches)


def _fixed_validation_batches(val: LabelledDataset, cfg: TrainConfig):
    """The same validation sample is reused every epoch so that the
    plateau comparison is stable across epochs."""
    rng = np.random.default_rng(derive_seed(cfg.seed, "validation-sample"))
    batches = []
    for _ in range(_VALIDATION_BATCHES):
        if isinstance(cfg.loss, TripletLoss):
            a, p, n = sample_triplet_indices(val, cfg.batch_size, rng)
            batches.append((val.words[a], val.words[p], val.words[n], val.width))
        else:
            batches.append(sample_episode(val, cfg.loss, rng))
    return batches


def train(dataset: LabelledDataset, val: LabelledDataset, arch: MlpArchitecture,
          cfg: TrainConfig):
    """Train an embedding network; returns (best network, epoch log).

    Optimization is mini-batch Adam starting at cfg.initial_lr.  After
    each epoch the validation loss is evaluated on a fixed sample; when
    it fails to improve for plateau_patience consecutive epochs the
    learning rate is multiplied by lr_factor.  Training stops at
    max_epochs or once the learning rate falls below min_lr, and the
    network with the best validation loss is returned.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    net = init_network(arch, derive_seed(cfg.seed, "network-init"))
    log: list[EpochRecord] = []
    if cfg.max_epochs == 0:
        return net, log

    step_rng = np.random.default_rng(derive_seed(cfg.seed, "train-sampling"))
    val_batches = _fixed_validation_batches(val, cfg)
    adam = init_adam(net.parameters(), cfg.initial_lr)
    steps = _epoch_steps(dataset, cfg.batch_size)

    best_net = net.copy()
    best_val = np.inf
    lr = cfg.initial_lr
    since_improve = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_loss = 0.0
        for _ in range(steps):
            loss, grads = _step_loss_and_grads(net, dataset, cfg, step_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss {loss!r} at epoch {epoch}"
                )
            adam_step(net.parameters(), grads, adam)
            epoch_loss += loss
        if not net.all_finite():
            raise TrainingDivergedError(f"non-finite network parameter at epoch {epoch}")
        train_loss = epoch_loss / steps
        val_loss = _validation_loss(net, val_batches, cfg.loss)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        log.append(EpochRecord(epoch, train_loss, val_loss, lr))

        if val_loss < best_val:
            best_val = val_loss
            best_net = net.copy()
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= cfg.plateau_patience:
                lr *= cfg.lr_factor
                adam.lr = lr
                since_improve = 0
                if lr < cfg.min_lr:
                    break
    return best_net, log


def format_training_log(log: list[EpochRecord]) -> str:
    """Line-delimited epoch records: epoch, train loss, val loss, lr."""
    lines = [
        f"epoch={r.epoch} train_loss={r.train_loss!r} val_loss={r.val_loss!r} lr={r.lr!r}"
        for r in log
    ]
    return "\n".join(lines) + ("\n" if lines else "")
