"""floranet: a from-scratch CNN toolkit for flower classification.

Exact-count architecture descriptors, seven first-order optimizers,
transfer learning with prefix freezing, macro classification metrics,
and an HTTP inference service.
"""

__version__ = "0.1.0"

from .arch import ArchDescriptor, FreezePlan, apply_freeze, build_architecture
from .arch import count_layers, count_parameters
from .model import Model
from .tensor import Rng, Tensor

__all__ = [
    "ArchDescriptor",
    "FreezePlan",
    "Model",
    "Rng",
    "Tensor",
    "apply_freeze",
    "build_architecture",
    "count_layers",
    "count_parameters",
    "__version__",
]
