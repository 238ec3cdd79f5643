"""Training-free open-vocabulary segmentation engine.

Feature bundles extracted offline (foundation-model patch features plus
CLIP value embeddings) are turned into attention maps, dense joint-space
embeddings, and per-pixel class labels, with evaluation tooling alongside.
"""

__version__ = "0.1.0"

from .backend import get_backend, set_backend

__all__ = ["get_backend", "set_backend", "__version__"]
