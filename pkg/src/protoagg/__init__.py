"""Compact prototypes for landmark-linked binary feature descriptors.

The package compresses the set of binary descriptors observed for each
3D landmark into one low-dimensional real-valued prototype: a learned
embedding network maps descriptors to real vectors, the prototype is
their running mean (updatable one observation at a time), and matching
new descriptors against a map reduces to Euclidean nearest-neighbour
search over prototypes.  Baseline aggregations, exact and approximate
search indexes, synthetic corpora and the precision benchmark live in
their own modules.
"""

from .descriptor import BinaryDescriptor, hamming
from .dataset import (
    LabelledDataset,
    LabelledDescriptor,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_by_keyframe,
)
from .network import (
    AdamState,
    EmbeddingNetwork,
    MlpArchitecture,
    adam_step,
    init_adam,
    init_network,
    load_network,
    save_network,
    selu,
)
from .prototypes import (
    Prototype,
    PrototypeStore,
    init_prototype,
    load_store,
    memory_report,
    save_store,
    update_prototype,
)
from .training import (
    Episode,
    PrototypicalLoss,
    TrainConfig,
    Triplet,
    TripletLoss,
    prototypical_episode_loss,
    sample_episode,
    sample_triplets,
    train,
    triplet_loss,
)
from .baselines import (
    PcaModel,
    pca_fit,
    pca_prototype,
    quantized_mean,
    random_sample_prototype,
)
from .search import (
    ExactEuclideanIndex,
    ExactHammingIndex,
    RandomizedForestIndex,
    nn_exact_euclidean,
    nn_exact_hamming,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    benchmark_table,
    dimension_sweep,
    evaluate_method,
)

__version__ = "0.1.0"
