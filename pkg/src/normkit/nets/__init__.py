from .adam import AdamState, NonFiniteGradient, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gru import GruCell, GruModel, gru_backward, gru_forward, gru_step
from .layer import LinearLayer, layer_backward, layer_forward
from .mlp import Mlp

__all__ = [
    "AdamState", "NonFiniteGradient", "adam_step", "load_checkpoint", "save_checkpoint",
    "GruCell", "GruModel", "gru_backward", "gru_forward", "gru_step",
    "LinearLayer", "layer_backward", "layer_forward", "Mlp",
]
