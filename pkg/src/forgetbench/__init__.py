"""Continual intent-classification benchmark.

Three backbones (pooled-embedding ANN, GRU, Transformer encoder) trained over
label-disjoint task sequences, with replay (MIR), distillation (LwF), and
task-masking (HAT) strategies that can be composed freely. Everything runs on
a small built-in float64 autodiff engine so results are exactly reproducible
on CPU.
"""

__version__ = "0.1.0"

from .autograd import Tape, Tensor, backward
from .models import ModelConfig, build_model

__all__ = ["Tape", "Tensor", "backward", "ModelConfig", "build_model", "__version__"]
