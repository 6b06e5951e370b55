"""
Streaming prototype updates
===========================

A landmark's prototype is the mean of the real-valued embeddings of its
descriptors.  Storing the observation count next to the mean makes the
prototype exactly updatable one embedding at a time, so the raw
descriptors can be discarded as soon as they are folded in.

The binary alternative (the per-bit quantized mean) cannot do this: two
different descriptor multisets can share a quantized mean yet disagree
after the same new descriptor arrives.
"""

import numpy as np

from protoagg import BinaryDescriptor, init_prototype, update_prototype
from protoagg.baselines import quantized_mean

rng = np.random.default_rng(1)

# fold embeddings one at a time; the running vector stays equal to the
# batch mean of everything seen so far
embeddings = rng.standard_normal((12, 16))
proto = init_prototype([embeddings[0]])
for e in embeddings[1:]:
    proto = update_prototype(proto, e)

batch = embeddings.mean(axis=0)
print("count:", proto.count)
print("max |streaming - batch mean|:", np.abs(proto.vector - batch).max())

# arrival order does not matter
shuffled = embeddings[rng.permutation(12)]
proto2 = init_prototype([shuffled[0]])
for e in shuffled[1:]:
    proto2 = update_prototype(proto2, e)
print("max |order A - order B|:", np.abs(proto.vector - proto2.vector).max())

# the quantized mean has no such update rule.  These two multisets have
# identical quantized means...
zeros, ones = BinaryDescriptor.zeros(64), BinaryDescriptor.ones(64)
set_a = [zeros, ones]   # per-bit mean 0.5, ties round up -> all ones
set_b = [ones]
print("\nquantized means equal:", quantized_mean(set_a) == quantized_mean(set_b))

# ...but appending the same new descriptor drives them apart, so no
# update of the stored mean alone can be correct
print("still equal after the same append:",
      quantized_mean(set_a + [zeros]) == quantized_mean(set_b + [zeros]))
