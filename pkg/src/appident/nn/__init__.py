from .layers import LSTM, BatchNorm, Conv1D, Dense, Dropout, Layer, MaxPool1D, Param, ReLU, Softmax
from .network import Network, cross_entropy, cross_entropy_from_logits, layer_from_spec
from .optim import Adam
from .training import TrainConfig, TrainingDiverged, TrainResult, train_model
from .checkpoint import CheckpointError, load_checkpoint, manifest_hash, save_checkpoint

__all__ = [
    "Adam",
    "BatchNorm",
    "CheckpointError",
    "Conv1D",
    "Dense",
    "Dropout",
    "LSTM",
    "Layer",
    "MaxPool1D",
    "Network",
    "Param",
    "ReLU",
    "Softmax",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "cross_entropy",
    "cross_entropy_from_logits",
    "layer_from_spec",
    "load_checkpoint",
    "manifest_hash",
    "save_checkpoint",
    "train_model",
]
