"""The serve loop: handshake, then one reply per request line.

Requests are handled strictly serially. A model failure or a malformed
frame produces an {"id", "error"} reply and the process stays alive;
only EOF on stdin ends the loop. Frames that are too broken to carry
an id are answered with id -1.
"""

from __future__ import annotations

import sys

import numpy as np

from .frames import FrameError, error_line, handshake_line, parse_request, response_line

__all__ = ["serve"]


def _emit(out, line: str) -> None:
    out.write(line + "\n")
    out.flush()


def serve(segment_fn, name: str, stdin=None, stdout=None) -> int:
    """Run the protocol loop until stdin closes.

    ``segment_fn(slice, box) -> prob`` does the actual work; whatever
    it raises is reported on the wire rather than crashing the server.
    """
    inp = sys.stdin.buffer if stdin is None else stdin
    out = sys.stdout if stdout is None else stdout
    _emit(out, handshake_line(name))
    for raw in inp:
        if not raw.strip():
            continue
        try:
            rid, sl, box = parse_request(raw)
        except FrameError as e:
            _emit(out, error_line(e.rid, str(e)))
            continue
        try:
            prob = np.asarray(segment_fn(sl, box))
            if prob.shape != sl.shape:
                raise RuntimeError(
                    f"model returned shape {prob.shape} for a {sl.shape} slice"
                )
            line = response_line(rid, prob)
        except Exception as e:
            line = error_line(rid, f"{type(e).__name__}: {e}")
        _emit(out, line)
    return 0
