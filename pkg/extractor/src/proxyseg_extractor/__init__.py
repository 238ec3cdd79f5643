"""Feature-bundle extraction from pretrained ViT checkpoints.

Produces the manifest + NPY layout the proxyseg engine consumes. The engine
is a separate package; the only shared surface is that file format.
"""

from .errors import ExtractorError

__all__ = ["ExtractorError"]
__version__ = "0.1.0"
