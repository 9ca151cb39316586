"""Miniature pyramid encoders with compact and full-masked forward paths."""

from .common import EncoderError, PatchMerge, VisibilityMask
from .pvt import MiniPVTConfig, PVTEncoder, validate_pvt_geometry
from .swin import MiniSwinConfig, SwinEncoder, validate_swin_geometry

__all__ = [
    "EncoderError",
    "PatchMerge",
    "VisibilityMask",
    "MiniPVTConfig",
    "PVTEncoder",
    "validate_pvt_geometry",
    "MiniSwinConfig",
    "SwinEncoder",
    "validate_swin_geometry",
]
