"""Nearest-neighbour search over prototype vectors and raw descriptors.

Exact search is a vectorized full scan (Euclidean over real vectors,
Hamming over packed descriptors) with ties broken by smallest id.  The
approximate index is a forest of randomized partition trees sharing one
priority queue of branch candidates; its checked-leaf budget trades
accuracy for speed and degenerates to the exact scan when it covers
every leaf.
"""

from __future__ import annotations

import heapq

import numpy as np

from .descriptor import BinaryDescriptor, hamming_to_many, popcount
from .errors import DimensionMismatchError

DEFAULT_TREES = 4
DEFAULT_LEAF_SIZE = 16
DEFAULT_CHECKED_LEAVES = 256
_BLOCK_LEAVES = 16  # granularity at which branch candidates are expanded


def _as_ids(ids, n) -> np.ndarray:
    if ids is None:
        return np.arange(n, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ValueError(f"expected {n} ids, got shape {ids.shape}")
    if len(np.unique(ids)) != n:
        raise ValueError("item ids must be unique")
    return ids


class ExactEuclideanIndex:
    """Full-scan Euclidean nearest neighbour with smallest-id tie breaking."""

    def __init__(self, vectors: np.ndarray, ids=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("index needs a nonempty (n, dim) vector matrix")
        ids = _as_ids(ids, vectors.shape[0])
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.vectors = np.ascontiguousarray(vectors[order])
        self.dim = vectors.shape[1]

    def query(self, q: np.ndarray):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"query shape {q.shape}, index dim {self.dim}")
        d = self.vectors - q
        d2 = np.einsum("ij,ij->i", d, d)
        row = int(np.argmin(d2))  # rows are id-sorted: first minimum = smallest id
        return int(self.ids[row]), float(np.sqrt(d2[row]))

    def query_batch(self, Q: np.ndarray, chunk: int = 256):
        """Row-wise queries with math identical to query()."""
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise DimensionMismatchError(f"batch shape {Q.shape}, index dim {self.dim}")
        out_ids = np.empty(len(Q), dtype=np.int64)
        out_d = np.empty(len(Q))
        for lo in range(0, len(Q), chunk):
            block = Q[lo: lo + chunk]
            d = block[:, None, :] - self.vectors[None, :, :]
            d2 = np.einsum("qij,qij->qi", d, d)
            rows = np.argmin(d2, axis=1)
            out_ids[lo: lo + len(block)] = self.ids[rows]
            out_d[lo: lo + len(block)] = np.sqrt(d2[np.arange(len(block)), rows])
        return out_ids, out_d


class ExactHammingIndex:
    """Full-scan Hamming nearest neighbour over packed descriptors."""

    def __init__(self, words: np.ndarray, width: int, ids=None):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[0] == 0:
            raise ValueError("index needs a nonempty (n, words) descriptor matrix")
        if words.shape[1] != width // 64:
            raise DimensionMismatchError(
                f"{words.shape[1]} words per row does not match width {width}"
            )
        ids = _as_ids(ids, words.shape[0])
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.words = np.ascontiguousarray(words[order])
        self.width = width

    def _query_words(self, query) -> np.ndarray:
        if isinstance(query, BinaryDescriptor):
            if query.width != self.width:
                raise DimensionMismatchError(
                    f"query width {query.width}, index width {self.width}"
                )
            return query.words
        query = np.asarray(query, dtype=np.uint64)
        if query.shape != (self.width // 64,):
            raise DimensionMismatchError(f"query shape {query.shape} for width {self.width}")
        return query

    def query(self, query):
        d = hamming_to_many(self._query_words(query), self.words)
        row = int(np.argmin(d))
        return int(self.ids[row]), int(d[row])

    def query_batch(self, words_matrix: np.ndarray, chunk: int = 64):
        words_matrix = np.ascontiguousarray(words_matrix, dtype=np.uint64)
        out_ids = np.empty(len(words_matrix), dtype=np.int64)
        out_d = np.empty(len(words_matrix), dtype=np.int64)
        for lo in range(0, len(words_matrix), chunk):
            block = words_matrix[lo: lo + chunk]
            d = popcount(np.bitwise_xor(block[:, None, :], self.words[None, :, :]))
            d = d.sum(axis=2, dtype=np.int64)
            rows = np.argmin(d, axis=1)
            out_ids[lo: lo + len(block)] = self.ids[rows]
            out_d[lo: lo + len(block)] = d[np.arange(len(block)), rows]
        return out_ids, out_d


def nn_exact_euclidean(query, vectors, ids=None):
    """One-shot exact Euclidean nearest neighbour; returns (id, distance)."""
    return ExactEuclideanIndex(vectors, ids).query(query)


def nn_exact_hamming(query, words, width, ids=None):
    """One-shot exact Hamming nearest neighbour; returns (id, distance)."""
    return ExactHammingIndex(words, width, ids).query(query)


class _Tree:
    __slots__ = ("dim", "val", "left", "right", "start", "end", "nleaves", "root")


def _build_tree(vectors: np.ndarray, order: np.ndarray, rng, leaf_size: int) -> _Tree:
    """Partition `order` in place; each node owns the contiguous slice
    [start, end) of it.  Iterative so lopsided splits cannot overflow
    the recursion limit."""
    dim, val, left, right = [], [], [], []
    start, end, nleaves = [], [], []
    # stack entries: (lo, hi, parent node, is_right_child)
    stack = [(0, len(order), -1, False)]
    root = 0
    while stack:
        lo, hi, parent, is_right = stack.pop()
        node = len(dim)
        dim.append(-1)
        val.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(lo)
        end.append(hi)
        nleaves.append(1)
        if parent >= 0:
            if is_right:
                right[parent] = node
            else:
                left[parent] = node
        if hi - lo <= leaf_size:
            continue
        rows = vectors[order[lo:hi]]
        spread = rows.max(axis=0) - rows.min(axis=0)
        usable = np.flatnonzero(spread > 0)
        if len(usable) == 0:  # all points identical: keep as one leaf
            continue
        d = int(usable[rng.integers(0, len(usable))])
        col = rows[:, d]
        v = float(col.mean())
        mask = col < v
        n_low = int(mask.sum())
        if n_low == 0 or n_low == hi - lo:  # numerically degenerate split
            continue
        seg = order[lo:hi]
        order[lo:hi] = np.concatenate([seg[mask], seg[~mask]])
        dim[node] = d
        val[node] = v
        # right pushed first so the left child is created next (creation
        # order is irrelevant to queries but kept depth-first for locality)
        stack.append((lo + n_low, hi, node, True))
        stack.append((lo, lo + n_low, node, False))
    # children are always created after their parent, so one reverse
    # sweep accumulates leaf counts bottom-up
    for node in range(len(dim) - 1, -1, -1):
        if left[node] >= 0:
            nleaves[node] = nleaves[left[node]] + nleaves[right[node]]
    tree = _Tree()
    tree.root = root
    tree.dim, tree.val, tree.left, tree.right = dim, val, left, right
    tree.start, tree.end, tree.nleaves = start, end, nleaves
    return tree


class RandomizedForestIndex:
    """Approximate Euclidean nearest neighbour over a forest of
    randomized mean-split partition trees.

    Queries walk a shared priority queue of branch candidates keyed by
    the accumulated squared split-plane violation, expanding the most
    promising branches until `budget` leaves have been checked.  All
    checked items are scored and the best is returned with its exact
    distance, so the result is always a real item and its reported
    distance is never below the true minimum.  Deterministic for a
    fixed build seed.
    """

    def __init__(self, vectors: np.ndarray, ids=None, n_trees: int = DEFAULT_TREES,
                 leaf_size: int = DEFAULT_LEAF_SIZE, seed: int = 0):
        if n_trees < 1 or leaf_size < 1:
            raise ValueError("n_trees and leaf_size must be >= 1")
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("index needs a nonempty (n, dim) vector matrix")
        ids = _as_ids(ids, vectors.shape[0])
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.vectors = np.ascontiguousarray(vectors[order])
        self.dim = vectors.shape[1]
        self.leaf_size = leaf_size
        rng = np.random.default_rng(seed)
        self._trees = []
        self._tree_rows = []
        self._tree_vecs = []
        self.total_leaves = 0
        for _ in range(n_trees):
            rows = np.arange(len(self.vectors))
            tree = _build_tree(self.vectors, rows, rng, leaf_size)
            self._trees.append(tree)
            self._tree_rows.append(rows)
            # float32 copy in tree layout: cheap candidate scoring; the
            # winner's distance is recomputed in float64 below
            self._tree_vecs.append(np.ascontiguousarray(self.vectors[rows], dtype=np.float32))
            self.total_leaves += tree.nleaves[tree.root]

    def query(self, q: np.ndarray, budget: int = DEFAULT_CHECKED_LEAVES):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatchError(f"query shape {q.shape}, index dim {self.dim}")
        if budget < 1:
            raise ValueError("checked-leaf budget must be >= 1")
        ql = q.tolist()
        trees = self._trees
        heap: list = []
        taken: list = []
        remaining = budget

        def expand(ti, node, key):
            nonlocal remaining
            t = trees[ti]
            dim, val = t.dim, t.val
            lft, rgt, nlv = t.left, t.right, t.nleaves
            cap = _BLOCK_LEAVES if _BLOCK_LEAVES < remaining else remaining
            while lft[node] >= 0 and nlv[node] > cap:
                d = dim[node]
                diff = ql[d] - val[node]
                if diff < 0.0:
                    far = rgt[node]
                    node = lft[node]
                else:
                    far = lft[node]
                    node = rgt[node]
                heapq.heappush(heap, (key + diff * diff, ti, far))
            taken.append((ti, t.start[node], t.end[node]))
            remaining -= nlv[node]

        for ti in range(len(trees)):
            if remaining <= 0:
                break
            expand(ti, trees[ti].root, 0.0)
        while remaining > 0 and heap:
            key, ti, node = heapq.heappop(heap)
            expand(ti, node, key)

        rows = np.concatenate([self._tree_rows[ti][s:e] for ti, s, e in taken])
        cand = np.concatenate([self._tree_vecs[ti][s:e] for ti, s, e in taken])
        d = cand - q.astype(np.float32)
        d2 = np.einsum("ij,ij->i", d, d)
        best_rows = rows[d2 == d2.min()]
        row = int(best_rows.min())
        if len(best_rows) > 1:  # break float32 near-ties on exact distances
            dv = self.vectors[best_rows] - q
            exact = np.einsum("ij,ij->i", dv, dv)
            row = int(best_rows[exact == exact.min()].min())
        # same reduction as the exact index so a full-budget query is
        # bit-identical to an exact scan
        dv = self.vectors[row][None, :] - q
        d2_exact = np.einsum("ij,ij->i", dv, dv)[0]
        return int(self.ids[row]), float(np.sqrt(d2_exact))

    def query_batch(self, Q: np.ndarray, budget: int = DEFAULT_CHECKED_LEAVES):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise DimensionMismatchError(f"batch shape {Q.shape}, index dim {self.dim}")
        out_ids = np.empty(len(Q), dtype=np.int64)
        out_d = np.empty(len(Q))
        for i, q in enumerate(Q):
            out_ids[i], out_d[i] = self.query(q, budget)
        return out_ids, out_d
