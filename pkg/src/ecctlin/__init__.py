"""Transformer and belief-propagation decoders for binary linear block codes."""

from .bp import bp_decode, bp_decode_batch
from .channel import ChannelConfig, build_decoder_input, transmit
from .codes import Code, ParityCheckMatrix, load_alist, save_alist
from .training import TrainConfig, train
from .transformer import DecoderModel, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig",
    "Code",
    "DecoderModel",
    "ModelConfig",
    "ParityCheckMatrix",
    "TrainConfig",
    "bp_decode",
    "bp_decode_batch",
    "build_decoder_input",
    "load_alist",
    "save_alist",
    "train",
    "transmit",
]
