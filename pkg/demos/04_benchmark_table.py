"""
The six-method precision benchmark
==================================

One matching step of an incremental mapping pipeline: 90% of keyframes
form the support set (prototypes are built from them and the raw
descriptors discarded), the rest simulate newly arrived frames.
Sampled query descriptors are matched to the nearest unit of each
method; precision is the fraction matched to their own landmark.
"""

import numpy as np

from protoagg import (
    EvalConfig,
    MlpArchitecture,
    SynthConfig,
    TrainConfig,
    TripletLoss,
    benchmark_table,
    generate_synthetic,
    split_by_keyframe,
    train,
)
from protoagg.evaluation import format_report_table, format_timings

WIDTH = 512


def corpus(seed):
    return generate_synthetic(SynthConfig(
        num_landmarks=120, num_keyframes=60, observations_per_landmark=(4, 8),
        bit_flip_prob=0.08, width=WIDTH, seed=seed))


train_set, val_set, eval_set = corpus(20), corpus(21), corpus(22)

nets = {}
for dim in (16, 32):
    cfg = TrainConfig(loss=TripletLoss(margin=4.0), max_epochs=6,
                      plateau_patience=3, batch_size=128, seed=23 + dim)
    nets[dim], _ = train(train_set, val_set,
                         MlpArchitecture("funnel", 3, WIDTH, dim), cfg)
    print(f"trained {dim}-dim funnel network")

support, query = split_by_keyframe(eval_set, 0.9, seed=24)
report = benchmark_table(support, query, nets[32], nets[16],
                         EvalConfig(num_query_samples=2000, seed=25))
print()
print(format_report_table(report))
print("timings:")
print(format_timings(report))
