"""
Approximate nearest-neighbour search
====================================

Matching against a large prototype store can use a forest of randomized
partition trees instead of an exhaustive scan.  The checked-leaf budget
trades accuracy for speed: each query expands the most promising
branches (shared priority queue across trees) until the budget is
spent, then scores every gathered candidate exactly.
"""

import time

import numpy as np

from protoagg import ExactEuclideanIndex, RandomizedForestIndex

rng = np.random.default_rng(2)
vectors = rng.random((10_000, 16))
queries = rng.random((500, 16))

exact = ExactEuclideanIndex(vectors)
forest = RandomizedForestIndex(vectors, seed=3)

t0 = time.perf_counter()
truth = [exact.query(q)[0] for q in queries]
exact_us = (time.perf_counter() - t0) / len(queries) * 1e6
print(f"exact scan: {exact_us:.0f} us/query")

print(f"\n{'budget':>8} {'recall@1':>9} {'us/query':>9} {'vs exact':>9}")
for budget in (16, 64, 256, 1024):
    t0 = time.perf_counter()
    found = [forest.query(q, budget=budget)[0] for q in queries]
    per = (time.perf_counter() - t0) / len(queries) * 1e6
    recall = np.mean([f == t for f, t in zip(found, truth)])
    print(f"{budget:>8} {recall:>9.3f} {per:>9.0f} {per / exact_us:>8.2f}x")

# with the budget covering every leaf the forest IS an exact scan
nid, dist = forest.query(queries[0], budget=10_000)
assert (nid, dist) == exact.query(queries[0])
print("\nfull budget reproduces the exact result:", (nid, round(dist, 4)))
