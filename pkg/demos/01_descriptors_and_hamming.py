"""
Packed binary descriptors and Hamming distance
===============================================

Binary feature descriptors are fixed-width bit vectors (512 bits in the
FREAK-style default) compared by Hamming distance.  This package packs
them into 64-bit words so the distance is a XOR plus popcount.
"""

import numpy as np

from protoagg import BinaryDescriptor, hamming

rng = np.random.default_rng(0)

# a descriptor can come from raw bits, bytes, or a random draw
bits = (rng.random(512) < 0.5).astype(np.uint8)
d = BinaryDescriptor.from_bits(bits)
print("width:", d.width, "bits packed into", len(d.words), "words")
print("first bits:", bits[:16].tolist())

# Hamming distance counts differing bit positions
e = BinaryDescriptor.random(512, rng)
print("distance to a random descriptor:", hamming(d, e), "(expect about 256)")
print("distance to itself:", hamming(d, d))

# flipping k bits moves the descriptor exactly k away
flipped = bits.copy()
flipped[:20] ^= 1
print("distance after flipping 20 bits:", hamming(d, BinaryDescriptor.from_bits(flipped)))

# the {0,1} float encoding feeds the embedding network; its L1 distance
# reproduces the Hamming distance exactly
l1 = np.abs(d.to_real() - e.to_real()).sum()
print("L1 of real encodings equals Hamming:", int(l1) == hamming(d, e))
