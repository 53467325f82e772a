"""Multiplex molecular message passing with built-in reverse-mode autodiff.

The package splits into small layers: ``autodiff`` (tensors and tapes),
``data`` (molecules and datasets), ``graph`` (two-layer neighbor graphs and
angle bookkeeping), ``basis`` (geometric embeddings), ``model`` (the
network), ``training`` (optimization) and ``cli`` (commands).
"""

from .autodiff import Tape, Tensor, backward
from .basis import GeometricFeatures, featurize
from .data import (
    Dataset,
    Molecule,
    load_manifest,
    parse_molecule,
    serialize_molecule,
    split_dataset,
    target_stats,
)
from .graph import (
    MultiplexGraph,
    build_multiplex,
    count_angles,
    count_messages,
    enumerate_angle_triples,
    neighbor_search,
)
from .model import (
    MessageTally,
    ModelConfig,
    ParamStore,
    forward,
    init_params,
    load_checkpoint,
    prepare_inputs,
    save_checkpoint,
)
from .training import TrainConfig, TrainReport, compute_metrics, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "GeometricFeatures",
    "featurize",
    "Dataset",
    "Molecule",
    "load_manifest",
    "parse_molecule",
    "serialize_molecule",
    "split_dataset",
    "target_stats",
    "MultiplexGraph",
    "build_multiplex",
    "count_angles",
    "count_messages",
    "enumerate_angle_triples",
    "neighbor_search",
    "MessageTally",
    "ModelConfig",
    "ParamStore",
    "forward",
    "init_params",
    "load_checkpoint",
    "prepare_inputs",
    "save_checkpoint",
    "TrainConfig",
    "TrainReport",
    "compute_metrics",
    "evaluate",
    "train",
    "__version__",
]
