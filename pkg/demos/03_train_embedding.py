"""
Training an embedding network
=============================

A small funnel MLP (widths halving toward the output) learns to map
512-bit descriptors to 16-dim vectors such that observations of the
same landmark land close together.  Training samples random triplets
(anchor, positive, negative) and minimizes the margin ranking loss with
Adam, decaying the learning rate when the validation loss stalls.
"""

import numpy as np

from protoagg import (
    MlpArchitecture,
    SynthConfig,
    TrainConfig,
    TripletLoss,
    generate_synthetic,
    train,
)

train_set = generate_synthetic(SynthConfig(
    num_landmarks=80, num_keyframes=40, observations_per_landmark=(4, 8),
    bit_flip_prob=0.05, width=512, seed=10))
val_set = generate_synthetic(SynthConfig(
    num_landmarks=40, num_keyframes=40, observations_per_landmark=(4, 8),
    bit_flip_prob=0.05, width=512, seed=11))
print(f"training on {len(train_set)} descriptors across "
      f"{len(train_set.landmarks())} landmarks")

arch = MlpArchitecture("funnel", num_layers=3, input_dim=512, output_dim=16)
print("layer widths:", arch.layer_widths())

cfg = TrainConfig(loss=TripletLoss(margin=0.5), max_epochs=8,
                  plateau_patience=3, batch_size=128, seed=12)
net, log = train(train_set, val_set, arch, cfg)

for r in log:
    print(f"epoch {r.epoch:2d}  train {r.train_loss:.4f}  "
          f"val {r.val_loss:.4f}  lr {r.lr:g}")

# same-landmark observations now embed much closer than cross-landmark ones
from protoagg.descriptor import unpack_to_real

rows_a = train_set.rows_for_landmark(int(train_set.landmarks()[0]))
rows_b = train_set.rows_for_landmark(int(train_set.landmarks()[1]))
ea = net.forward_batch(unpack_to_real(train_set.words[rows_a], 512))
eb = net.forward_batch(unpack_to_real(train_set.words[rows_b], 512))
intra = np.linalg.norm(ea[0] - ea[1])
inter = np.linalg.norm(ea[0] - eb[0])
print(f"\nintra-landmark embedding distance: {intra:.3f}")
print(f"inter-landmark embedding distance: {inter:.3f}")
