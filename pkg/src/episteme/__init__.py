"""Multi-robot active sensing driven by a multimodal VAE belief and a multi-head DQN."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
