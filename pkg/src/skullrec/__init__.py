"""Volumetric skull shape completion: file I/O, defect synthesis, a small
autodiff engine with a 3D conv autoencoder, training, and similarity
registration for implant extraction."""

__version__ = "0.1.0"

from .volume import Volume, binarize  # noqa: E402
from .formats import load_volume, save_volume  # noqa: E402

__all__ = ["Volume", "binarize", "load_volume", "save_volume", "__version__"]
