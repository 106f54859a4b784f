"""Small numpy neural-network engine: layers, losses, Adam, checkpoints."""

from ._backend import BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    BiLSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LSTM,
    MaxPool1D,
    Param,
    ReLU,
    Sequential,
    bilstm_backward,
    bilstm_forward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_backward,
    lstm_forward,
    maxpool1d_backward,
    maxpool1d_forward,
)
from .losses import bce, cross_entropy, mse, sigmoid, softmax, weighted_sum
from .optim import AdamState, adam_step, clip_grad_norm

__all__ = [
    "BACKEND", "load_checkpoint", "save_checkpoint", "BiLSTM", "Conv1D", "Dense", "Dropout", "Flatten",
    "Layer", "LSTM", "MaxPool1D", "Param", "ReLU", "Sequential", "bilstm_backward", "bilstm_forward",
    "conv1d_backward", "conv1d_forward", "dense_backward", "dense_forward", "dropout_backward",
    "dropout_forward", "lstm_backward", "lstm_forward", "maxpool1d_backward", "maxpool1d_forward",
    "bce", "cross_entropy", "mse", "sigmoid", "softmax", "weighted_sum", "AdamState", "adam_step",
    "clip_grad_norm",
]
