"""Dense numpy layers with hand-written backward passes."""
from . import functional
from .attention import EncoderBlock, MultiHeadSelfAttention, PositionalEncoding, causal_mask
from .conv import CausalConv1D
from .functional import leaky_relu, relu, sigmoid, sinusoidal_encoding, softmax, tanh
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    BatchNorm,
    Dense,
    Dropout,
    GlobalAveragePool1D,
    Layer,
    LayerNorm,
    LeakyReLU,
    Parameter,
    ReLU,
    Sequential,
    Sigmoid,
    Softmax,
    Tanh,
    check_finite,
    dense,
    glorot_uniform,
    set_debug,
)
from .optim import Adam, AdamState, adam_step, mse_loss
from .recurrent import LSTM, SimpleRNN

__all__ = [
    "Adam", "AdamState", "BatchNorm", "CausalConv1D", "Dense", "Dropout", "EncoderBlock",
    "GlobalAveragePool1D", "GradCheckReport", "LSTM", "Layer", "LayerNorm", "LeakyReLU",
    "MultiHeadSelfAttention", "Parameter", "PositionalEncoding", "ReLU", "Sequential",
    "Sigmoid", "SimpleRNN", "Softmax", "Tanh", "adam_step", "causal_mask", "check_finite",
    "dense", "functional", "glorot_uniform", "grad_check", "leaky_relu", "mse_loss", "relu",
    "set_debug", "sigmoid", "sinusoidal_encoding", "softmax", "tanh",
]
