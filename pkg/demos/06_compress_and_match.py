"""
End-to-end: compress a map and match a new frame
================================================

The full pipeline: embed every support descriptor, keep one (vector,
count) prototype per landmark, drop the raw descriptors, then match the
descriptors of a newly arrived frame against the prototype store.
"""

import numpy as np

from protoagg import (
    ExactEuclideanIndex,
    MlpArchitecture,
    PrototypeStore,
    SynthConfig,
    TrainConfig,
    TripletLoss,
    generate_synthetic,
    memory_report,
    split_by_keyframe,
    train,
    update_prototype,
)
from protoagg.evaluation import embed_dataset_words

WIDTH = 512

train_set = generate_synthetic(SynthConfig(
    num_landmarks=100, num_keyframes=50, observations_per_landmark=(4, 8),
    bit_flip_prob=0.05, width=WIDTH, seed=30))
scene = generate_synthetic(SynthConfig(
    num_landmarks=100, num_keyframes=50, observations_per_landmark=(4, 8),
    bit_flip_prob=0.05, width=WIDTH, seed=31))

net, _ = train(train_set, train_set, MlpArchitecture("funnel", 3, WIDTH, 16),
               TrainConfig(loss=TripletLoss(4.0), max_epochs=5, batch_size=128, seed=32))

support, new_frames = split_by_keyframe(scene, 0.9, seed=33)

# build the store: one prototype per landmark, raw descriptors dropped
embeddings = embed_dataset_words(net, support.words, WIDTH)
store = PrototypeStore(16)
for lm in support.landmarks():
    rows = support.rows_for_landmark(int(lm))
    store.add_landmark(int(lm), embeddings[rows])

rep = memory_report(store, descriptor_width_bits=WIDTH)
print(f"landmarks stored: {rep.num_landmarks}")
print(f"bytes per landmark: {rep.prototype_bytes_per_landmark:.0f} "
      f"(raw: {rep.raw_bytes_per_landmark:.0f})")
print(f"compression ratio: {rep.compression_ratio:.1f}x")

# match the new frames' descriptors against the store
ids, vectors, _ = store.as_matrix()
index = ExactEuclideanIndex(vectors, ids)
new_embeddings = embed_dataset_words(net, new_frames.words, WIDTH)
matched, _ = index.query_batch(new_embeddings)
correct = (matched == new_frames.landmark_ids.astype(np.int64)).mean()
print(f"\nnew-frame descriptors matched to the right landmark: {correct:.3f}")

# matched descriptors fold into their prototypes, keeping the map fresh
lm = int(matched[0])
before = store.get(lm).count
store.update(lm, new_embeddings[0])
print(f"landmark {lm} count after folding the new observation: "
      f"{before} -> {store.get(lm).count}")
