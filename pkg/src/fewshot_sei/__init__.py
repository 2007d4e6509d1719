"""Few-shot specific emitter identification toolkit.

Hybrid rotation + CutMix augmentation, a complex-valued convolutional
embedding network with a triplet-regularized cross-entropy objective,
a synthetic fingerprinted-emitter simulator, and a Monte Carlo few-shot
benchmark harness.
"""

__version__ = "0.1.0"

from .cvnn import ComplexTensor, CvcnnModel, ModelConfig
from .data import EmitterProfile, FewShotEpisode, SignalRecord
from .losses import SoftLabel, TripletIndices
from .metrics import EmbeddingSet
from .ndgrad import AdamState, Tensor
from .train import BenchmarkTable, TrainConfig, TrainReport

__all__ = [
    "__version__",
    "AdamState",
    "BenchmarkTable",
    "ComplexTensor",
    "CvcnnModel",
    "EmbeddingSet",
    "EmitterProfile",
    "FewShotEpisode",
    "ModelConfig",
    "SignalRecord",
    "SoftLabel",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "TripletIndices",
]
