"""Toy-scale trainer for the point-cloud registration networks.

Trains the tiled feature backbone (3 -> 64 -> 128 -> 1024) and the two
discrete-action actor heads (2048 -> 512 -> 256 -> 39) on synthetic shape
pairs, learns the lookup-table quantization tables with straight-through
gradients, and exports everything to the .rgkw weight container consumed by
the registration runtime. The runtime package is deliberately never imported:
the only shared contract is the weight file format.
"""

from .config import TrainConfig
from .train import TrainingDiverged, train_pointlk, train_reagent

__version__ = "0.1.0"

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "train_pointlk",
    "train_reagent",
    "__version__",
]
