"""Two-party secure transformer inference with communication accounting
and a plaintext knowledge-distillation pipeline."""

from .approx import ApproximationSpec
from .nn import ModelConfig, load_weights, save_weights, toy_config
from .protocols import ProtocolSession
from .ring import FixedPointCodec
from .shares import LocalDealerClient, SharedTensor, reconstruct, share
from .transport import CommLedger, simulated_latency_report

__all__ = [
    "ApproximationSpec",
    "CommLedger",
    "FixedPointCodec",
    "LocalDealerClient",
    "ModelConfig",
    "ProtocolSession",
    "SharedTensor",
    "load_weights",
    "reconstruct",
    "save_weights",
    "share",
    "simulated_latency_report",
    "toy_config",
]

__version__ = "0.1.0"
