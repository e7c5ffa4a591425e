"""Spiking neural networks with randomized smoothing input coding."""

__version__ = "0.1.0"

from .coding import CodingConfig, encode  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .model import Classifier  # noqa: E402
from .snn import Network, NetworkSpec, toy_spec  # noqa: E402

__all__ = ["BACKEND", "Classifier", "CodingConfig", "Network", "NetworkSpec", "encode", "toy_spec", "__version__"]
