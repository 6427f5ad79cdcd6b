"""Numerical core: FFTs, layer forward/backward passes and the optimizer."""
from .fft import dft, idft, irfft, rfft
from .layers import (
    gelu_backward,
    gelu_forward,
    gru_cell_forward,
    gru_sequence_backward,
    gru_sequence_forward,
    linear_backward,
    linear_forward,
    spectral_conv1d_backward,
    spectral_conv1d_forward,
)
from .optim import AdamWState, adamw_step

__all__ = [
    "dft",
    "idft",
    "rfft",
    "irfft",
    "linear_forward",
    "linear_backward",
    "gelu_forward",
    "gelu_backward",
    "gru_cell_forward",
    "gru_sequence_forward",
    "gru_sequence_backward",
    "spectral_conv1d_forward",
    "spectral_conv1d_backward",
    "AdamWState",
    "adamw_step",
]
