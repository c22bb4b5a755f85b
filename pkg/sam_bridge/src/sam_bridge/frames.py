"""Server-side framing for the ursam-seg/1 wire protocol.

One UTF-8 JSON object per line on stdin/stdout. A request carries a
base64 little-endian f32 slice of shape (h, w) and an inclusive
in-plane box [y0, x0, y1, x1]; the reply is either {"id", "prob_b64"}
with a map of the same shape or {"id", "error"}. The first line a
server prints is the handshake {"proto": "ursam-seg/1", "name": ...}.
Unknown request fields (the client may send a slice index "z", for
example) are ignored.
"""

from __future__ import annotations

import base64
import binascii
import json

import numpy as np

__all__ = [
    "PROTO",
    "FrameError",
    "handshake_line",
    "parse_request",
    "response_line",
    "error_line",
]

PROTO = "ursam-seg/1"


class FrameError(ValueError):
    """A request frame that cannot be honored.

    ``rid`` holds the request id when one could still be recovered, so
    the server can address its error reply; ``None`` otherwise.
    """

    def __init__(self, message: str, rid: int | None = None):
        super().__init__(message)
        self.rid = rid


def handshake_line(name: str) -> str:
    return json.dumps({"proto": PROTO, "name": str(name)}, separators=(",", ":"))


def _int_field(frame, key, rid):
    v = frame.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise FrameError(f"field {key!r} must be an integer, got {v!r}", rid)
    return v


def parse_request(line) -> tuple[int, np.ndarray, tuple[int, int, int, int]]:
    """Decode one request line into (id, slice, box).

    Raises :class:`FrameError` with a diagnostic on any malformed
    frame; the error keeps the request id when the frame got far
    enough to contain one.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FrameError(f"frame is not UTF-8: {e}") from e
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as e:
        raise FrameError(f"frame is not JSON: {e}") from e
    if not isinstance(frame, dict):
        raise FrameError(f"frame must be a JSON object, got {type(frame).__name__}")

    rid = frame.get("id")
    if isinstance(rid, bool) or not isinstance(rid, int):
        raise FrameError(f"field 'id' must be an integer, got {rid!r}")

    h = _int_field(frame, "h", rid)
    w = _int_field(frame, "w", rid)
    if h < 1 or w < 1:
        raise FrameError(f"slice dims must be positive, got {h}x{w}", rid)

    payload = frame.get("slice_b64")
    if not isinstance(payload, str):
        raise FrameError("field 'slice_b64' must be a base64 string", rid)
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as e:
        raise FrameError(f"slice_b64 is not valid base64: {e}", rid) from e
    if len(raw) != 4 * h * w:
        raise FrameError(
            f"slice payload is {len(raw)} bytes, expected {4 * h * w}", rid
        )
    sl = np.frombuffer(raw, dtype="<f4").reshape(h, w)

    box = frame.get("box")
    if not (isinstance(box, list) and len(box) == 4):
        raise FrameError(f"field 'box' must hold 4 coordinates, got {box!r}", rid)
    coords = []
    for v in box:
        if isinstance(v, bool) or not isinstance(v, int):
            raise FrameError(f"box coordinates must be integers, got {box!r}", rid)
        coords.append(v)
    y0, x0, y1, x1 = coords
    if not (0 <= y0 <= y1 < h and 0 <= x0 <= x1 < w):
        raise FrameError(f"box {box} outside slice {h}x{w}", rid)
    return rid, sl, (y0, x0, y1, x1)


def response_line(rid: int, prob) -> str:
    prob = np.asarray(prob)
    if prob.dtype != np.float32:
        prob = prob.astype(np.float32)
    if prob.ndim != 2:
        raise ValueError(f"probability map must be 2D, got shape {prob.shape}")
    if not np.isfinite(prob).all() or prob.min() < 0.0 or prob.max() > 1.0:
        raise ValueError("probabilities must be finite and within [0, 1]")
    payload = base64.b64encode(np.ascontiguousarray(prob, dtype="<f4").tobytes())
    return json.dumps(
        {"id": int(rid), "prob_b64": payload.decode("ascii")},
        separators=(",", ":"),
    )


def error_line(rid: int | None, message: str) -> str:
    return json.dumps(
        {"id": -1 if rid is None else int(rid), "error": str(message)},
        separators=(",", ":"),
    )
