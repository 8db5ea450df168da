"""Minimal float64 network stack for the line recognizer."""
from .asf import ASFBlock, asf_fuse
from .checkpoint import (Checkpoint, CheckpointError, NotACheckpoint, ShapeMismatch,
                         TruncatedCheckpoint, VersionMismatch, load_checkpoint, save_checkpoint)
from .layers import BatchNorm, BiLSTM, Conv2D, Dense, LogSoftmax, LSTM, MaxPool2D, Tensor
from .model import CONV_BLOCK, CRNN, LayerSpec, ModelSpec, table_layers
from .optim import Adam

__all__ = [
    "ASFBlock", "asf_fuse", "Adam", "BatchNorm", "BiLSTM", "CONV_BLOCK", "CRNN", "Checkpoint",
    "CheckpointError", "Conv2D", "Dense", "LSTM", "LayerSpec", "LogSoftmax", "MaxPool2D",
    "ModelSpec", "NotACheckpoint", "ShapeMismatch", "Tensor", "TruncatedCheckpoint",
    "VersionMismatch", "load_checkpoint", "save_checkpoint", "table_layers",
]
