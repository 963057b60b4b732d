"""Annotation-free cataract fundus restoration.

Cataract-like degradation synthesis, high-frequency structure guidance, a
domain-adaptive U-Net restoration GAN and full-reference metrics.
"""

from arcnet.filters import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
