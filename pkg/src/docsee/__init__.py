"""Grounded document QA at desk scale.

A sequence model that emits a <see> token ahead of each answer, decodes its
hidden state into a four-point polygon through a softmax-expectation head,
and trains on a synthetic, fully-annotated table corpus whose QA pairs are
verified against the source cells.
"""

__version__ = "0.1.0"

from .geometry import PixelPolygon, QuantPolygon, canonicalize, polygon_area, polygon_iou
from .vocab import Vocabulary, build_vocab, dequantize_coord, quantize_coord

__all__ = [
    "PixelPolygon",
    "QuantPolygon",
    "Vocabulary",
    "build_vocab",
    "canonicalize",
    "dequantize_coord",
    "polygon_area",
    "polygon_iou",
    "quantize_coord",
    "__version__",
]
