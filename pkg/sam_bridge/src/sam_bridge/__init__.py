"""Stdio bridge exposing SAM-family checkpoints to ursam-seg/1 clients."""

from .frames import PROTO, FrameError
from .runner import BridgeConfig

__all__ = ["PROTO", "FrameError", "BridgeConfig"]
__version__ = "0.1.0"
