"""Segmentation backends and the ursam-seg/1 wire protocol.

A backend turns a (slice, 2D box) prompt into a per-pixel foreground
probability map. Two implementations live here:

* :class:`SyntheticBackend`, a deterministic stand-in that degrades the
  known ground truth in proportion to how badly the box is placed. It
  exists so the whole pipeline can be exercised and measured without
  model weights.
* :class:`ProtocolBackend`, a client that drives any external model
  served over stdio speaking ``ursam-seg/1``.

Wire protocol (newline-delimited JSON, one frame per line):

* server handshake, first line on stdout:
  ``{"proto": "ursam-seg/1", "name": "<backend name>"}``
* request: ``{"id": <int>, "h": <int>, "w": <int>,
  "slice_b64": "<base64 of h*w little-endian float32>",
  "box": [y0, x0, y1, x1]}``
* response: ``{"id": <int>, "prob_b64": "<base64 of h*w LE float32>"}``
  or ``{"id": <int>, "error": "<message>"}``

Unknown fields in a frame are ignored, which is also how optional
extras (a ``"z"`` slice index on requests) stay compatible with
external servers. Exactly one request is in flight per process;
parallelism comes from running several processes.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .seeds import derive_rng, derive_seed

__all__ = [
    "PROTOCOL",
    "SegmentRequest",
    "SegmentResponse",
    "ProtocolError",
    "BackendError",
    "encode_request",
    "decode_request",
    "encode_response",
    "decode_response",
    "SyntheticParams",
    "synthetic_segment",
    "SyntheticBackend",
    "ProtocolBackend",
]

PROTOCOL = "ursam-seg/1"


class ProtocolError(ValueError):
    """Malformed frame, handshake mismatch, or a contract violation."""


class BackendError(RuntimeError):
    """The backend reported or caused a failure for a request."""


@dataclass(frozen=True)
class SegmentRequest:
    """One slice-level prompt. ``box`` is inclusive (y0, x0, y1, x1)."""

    id: int
    slice: np.ndarray
    box: tuple[int, int, int, int]
    z: int | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.slice, dtype=np.float32))
        if arr.ndim != 2 or 0 in arr.shape:
            raise ValueError(f"slice must be 2D and non-empty, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("slice intensities must be finite")
        object.__setattr__(self, "slice", arr)
        box = tuple(int(v) for v in self.box)
        if len(box) != 4:
            raise ValueError(f"box must be (y0, x0, y1, x1), got {self.box!r}")
        y0, x0, y1, x1 = box
        h, w = arr.shape
        if not (0 <= y0 <= y1 < h and 0 <= x0 <= x1 < w):
            raise ValueError(f"box {box} outside slice bounds {arr.shape}")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "id", int(self.id))


@dataclass(frozen=True)
class SegmentResponse:
    id: int
    prob: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.prob, dtype=np.float32))
        if arr.ndim != 2:
            raise ValueError(f"probability map must be 2D, got {arr.shape}")
        if not np.isfinite(arr).all() or (arr < 0).any() or (arr > 1).any():
            raise ValueError("probabilities must be finite and in [0, 1]")
        object.__setattr__(self, "prob", arr)
        object.__setattr__(self, "id", int(self.id))


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(arr.astype("<f4", copy=False).tobytes()).decode("ascii")


def _unb64(text: str, count: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as e:
        raise ProtocolError(f"{what}: invalid base64 ({e})") from e
    if len(raw) != count * 4:
        raise ProtocolError(
            f"{what}: payload is {len(raw)} bytes, expected {count * 4}"
        )
    return np.frombuffer(raw, dtype="<f4")


def encode_request(req: SegmentRequest) -> bytes:
    h, w = req.slice.shape
    frame = {
        "id": req.id,
        "h": h,
        "w": w,
        "slice_b64": _b64(req.slice),
        "box": list(req.box),
    }
    if req.z is not None:
        frame["z"] = int(req.z)
    return json.dumps(frame, separators=(",", ":")).encode("utf-8") + b"\n"


def _load_frame(line, what: str) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"{what}: not UTF-8 ({e})") from e
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"{what}: not valid JSON ({e})") from e
    if not isinstance(frame, dict):
        raise ProtocolError(f"{what}: frame must be a JSON object")
    return frame


def decode_request(line) -> SegmentRequest:
    frame = _load_frame(line, "request")
    for key in ("id", "h", "w", "slice_b64", "box"):
        if key not in frame:
            raise ProtocolError(f"request: missing field {key!r}")
    if not isinstance(frame["id"], int) or isinstance(frame["id"], bool):
        raise ProtocolError(f"request: id must be an integer, got {frame['id']!r}")
    h, w = frame["h"], frame["w"]
    if not all(isinstance(v, int) and v > 0 for v in (h, w)):
        raise ProtocolError(f"request: bad dimensions h={h!r} w={w!r}")
    box = frame["box"]
    if not (isinstance(box, list) and len(box) == 4 and all(isinstance(v, int) for v in box)):
        raise ProtocolError(f"request: bad box {box!r}")
    data = _unb64(frame["slice_b64"], h * w, "request").reshape(h, w)
    z = frame.get("z")
    if z is not None and not isinstance(z, int):
        raise ProtocolError(f"request: bad z {z!r}")
    try:
        return SegmentRequest(frame["id"], data, tuple(box), z)
    except ValueError as e:
        raise ProtocolError(f"request: {e}") from e


def encode_response(resp: SegmentResponse) -> bytes:
    frame = {"id": resp.id, "prob_b64": _b64(resp.prob)}
    return json.dumps(frame, separators=(",", ":")).encode("utf-8") + b"\n"


def encode_error(req_id: int, message: str) -> bytes:
    frame = {"id": int(req_id), "error": str(message)}
    return json.dumps(frame, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_response(line, h: int, w: int) -> SegmentResponse:
    """Parse a response frame; error frames raise :class:`BackendError`."""
    frame = _load_frame(line, "response")
    if "id" not in frame:
        raise ProtocolError("response: missing field 'id'")
    if not isinstance(frame["id"], int) or isinstance(frame["id"], bool):
        raise ProtocolError(f"response: id must be an integer, got {frame['id']!r}")
    if "error" in frame:
        raise BackendError(f"backend error for id {frame['id']}: {frame['error']}")
    if "prob_b64" not in frame:
        raise ProtocolError("response: missing field 'prob_b64'")
    data = _unb64(frame["prob_b64"], h * w, "response").reshape(h, w)
    try:
        return SegmentResponse(frame["id"], data)
    except ValueError as e:
        raise ProtocolError(f"response: {e}") from e


# ---------------------------------------------------------------------------
# Synthetic prompt-sensitive backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticParams:
    """Degradation knobs for the synthetic backend.

    ``boundary_scale`` is the largest boundary displacement in pixels
    at full misalignment; ``noise_rate`` the boundary corruption
    probability at full misalignment (applied as ``noise_rate * m**2``
    so badly placed boxes degrade much faster than well placed ones);
    ``noise_band`` the half-width of the corruptible ring; ``ramp`` the
    probability ramp half-width; ``field_smooth`` the correlation
    length of the displacement pattern; ``erode_bias`` the shared
    negative lean of the pattern (misaligned boxes under-segment).
    """

    boundary_scale: float = 6.0
    erode_bias: float = 0.5
    noise_rate: float = 1.3
    noise_band: float = 2.0
    ramp: float = 2.0
    field_smooth: float = 3.0
    inside: float = 0.95
    outside: float = 0.05


DEFAULT_SYNTH = SyntheticParams()


def _signed_distance(mask: np.ndarray) -> np.ndarray:
    # Positive outside, negative inside, never zero (grid distances).
    inside = mask.astype(bool)
    if not inside.any():
        return np.full(mask.shape, np.inf)
    if inside.all():
        return np.full(mask.shape, -np.inf)
    d_out = distance_transform_edt(~inside)
    d_in = distance_transform_edt(inside)
    return d_out - d_in


@lru_cache(maxsize=256)
def _fields(seed: int, shape: tuple[int, int], smooth: float, dy2: int, dx2: int):
    # One independent (pattern, noise) pair per box center offset, so
    # prompts at different positions fail in unrelated ways while a
    # center-preserving box sweep keeps a single fixed pattern.
    rng = derive_rng(seed, "fields", shape, dy2, dx2)
    raw = gaussian_filter(rng.standard_normal(shape), smooth, mode="wrap")
    peak = float(np.abs(raw).max())
    g = raw / peak if peak > 0 else raw
    u = rng.random(shape)
    g.setflags(write=False)
    u.setflags(write=False)
    return g, u


def _tight_box2d(fg: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(fg)
    return int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())


def synthetic_segment(
    slice2d,
    gt_slice,
    box,
    seed: int,
    params: SyntheticParams = DEFAULT_SYNTH,
) -> np.ndarray:
    """Ground-truth-derived probability map degraded by box misalignment.

    Starts from the ground truth clipped to the box. Misalignment m is
    the summed corner displacement between the box and the tight
    ground-truth box, normalized by the slice scale (h + w) and capped
    at 1; the image-scale denominator keeps m from saturating when the
    box extension is already large next to a small object. The prediction boundary is displaced by up to
    ``m * boundary_scale`` pixels along a smooth signed pattern (local
    erosion and dilation), boundary pixels are corrupted with
    probability ``m * noise_rate``, and the result is emitted as
    inside/outside probabilities with a soft ramp at the prediction
    boundary. The degradation pattern is drawn per box center offset,
    so prompts at different positions fail in unrelated ways while
    boxes sharing a center share one pattern. Bit-deterministic in
    (seed, request).

    A box equal to the tight ground-truth box gives m = 0: no
    displacement, no corruption, probability >= 0.5 exactly on the
    foreground. A box with no foreground inside returns the outside
    probability everywhere.
    """
    img = np.asarray(getattr(slice2d, "data", slice2d))
    gt = np.asarray(getattr(gt_slice, "data", gt_slice)).astype(bool)
    if img.shape != gt.shape:
        raise ValueError(f"slice/gt shape mismatch: {img.shape} vs {gt.shape}")
    h, w = gt.shape
    y0, x0, y1, x1 = (int(v) for v in box)
    if not (0 <= y0 <= y1 < h and 0 <= x0 <= x1 < w):
        raise ValueError(f"box {box} outside slice bounds {gt.shape}")

    out_flat = np.full((h, w), params.outside, dtype=np.float32)
    box_mask = np.zeros((h, w), dtype=bool)
    box_mask[y0 : y1 + 1, x0 : x1 + 1] = True
    clipped = gt & box_mask
    if not clipped.any():
        return out_flat

    gy0, gx0, gy1, gx1 = _tight_box2d(gt)
    # Per axis the displacement is 2 * max(edge deltas), equal to
    # 2*|center offset| + |size mismatch|: a translated box scores
    # worse even when one edge moves back toward the target.
    disp = 2.0 * max(abs(y0 - gy0), abs(y1 - gy1)) + 2.0 * max(
        abs(x0 - gx0), abs(x1 - gx1)
    )
    m = min(1.0, disp / float(h + w))

    dy2 = (y0 + y1) - (gy0 + gy1)
    dx2 = (x0 + x1) - (gx0 + gx1)
    g, u = _fields(seed, (h, w), params.field_smooth, dy2, dx2)

    sd = _signed_distance(clipped)
    # The pattern is shifted negative so misaligned boxes lean toward
    # under-segmentation; a shared lean survives ensemble voting, while
    # the zero-mean part of the pattern does not.
    pred = sd <= m * params.boundary_scale * (g - params.erode_bias)
    # Flip noise grows with the square of the misalignment so badly
    # placed prompts degrade much faster than well placed ones.
    corrupt = (np.abs(sd) <= params.noise_band) & (u < params.noise_rate * m * m)
    pred = np.where(corrupt, ~clipped, pred)

    if not pred.any():
        return out_flat
    sdp = _signed_distance(pred)
    ramp = np.clip(0.5 - sdp / (2.0 * params.ramp), 0.0, 1.0)
    prob = params.outside + (params.inside - params.outside) * ramp
    return prob.astype(np.float32)


class SyntheticBackend:
    """Per-organ synthetic backend bound to a ground-truth volume.

    Requests must carry the slice index ``z`` so the matching
    ground-truth plane can be looked up. Thread-safe; responses depend
    only on (seed, request).
    """

    name = "synthetic"

    def __init__(self, gt, seed: int = 0, params: SyntheticParams = DEFAULT_SYNTH):
        self._gt = np.asarray(getattr(gt, "data", gt)).astype(bool)
        if self._gt.ndim != 3:
            raise ValueError(f"ground truth must be 3D, got {self._gt.shape}")
        self._seed = derive_seed(seed, "synthetic-backend")
        self._params = params

    def segment(self, req: SegmentRequest) -> SegmentResponse:
        if req.z is None:
            raise BackendError("synthetic backend needs the slice index z")
        if not 0 <= req.z < self._gt.shape[0]:
            raise BackendError(f"slice index {req.z} outside ground truth depth")
        gt2d = self._gt[req.z]
        if gt2d.shape != req.slice.shape:
            raise BackendError(
                f"request slice {req.slice.shape} does not match ground truth "
                f"plane {gt2d.shape}"
            )
        prob = synthetic_segment(req.slice, gt2d, req.box, self._seed, self._params)
        return SegmentResponse(req.id, prob)

    def close(self):
        pass


# ---------------------------------------------------------------------------
# Subprocess protocol client
# ---------------------------------------------------------------------------


class ProtocolBackend:
    """Client for an external backend process speaking ursam-seg/1.

    One request is in flight at a time; responses are matched by id and
    validated (shape, range) before being returned. The child's stdout
    is consumed by a reader thread so timeouts cannot deadlock on a
    silent process.
    """

    def __init__(self, command, timeout: float = 120.0):
        if isinstance(command, str):
            command = shlex.split(command)
        self._command = list(command)
        self._timeout = float(timeout)
        self._lock = threading.Lock()
        self._next_id = 0
        self._lines: queue.Queue = queue.Queue()
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
        )
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        hello = _load_frame(self._read_line(), "handshake")
        if hello.get("proto") != PROTOCOL:
            self.close()
            raise ProtocolError(
                f"handshake: expected proto {PROTOCOL!r}, got {hello.get('proto')!r}"
            )
        self.name = str(hello.get("name", "external"))

    def _pump(self):
        stdout = self._proc.stdout
        try:
            for line in stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)

    def _read_line(self) -> bytes:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise BackendError(
                f"backend timed out after {self._timeout:g}s: {self._command}"
            ) from None
        if line is None:
            raise BackendError(f"backend closed its stdout: {self._command}")
        return line

    def segment(self, req: SegmentRequest) -> SegmentResponse:
        with self._lock:
            if self._proc.poll() is not None:
                raise BackendError(
                    f"backend exited with code {self._proc.returncode}"
                )
            # Ids on the wire are this client's own monotone counter, so
            # the process sees a single well-ordered stream no matter how
            # callers number their requests.
            wire = replace(req, id=self._next_id)
            self._next_id += 1
            try:
                self._proc.stdin.write(encode_request(wire))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as e:
                raise BackendError(f"backend pipe closed: {e}") from e
            h, w = req.slice.shape
            resp = decode_response(self._read_line(), h, w)
        if resp.id != wire.id:
            raise ProtocolError(
                f"response id {resp.id} does not match request id {wire.id}"
            )
        if resp.id == req.id:
            return resp
        return SegmentResponse(req.id, resp.prob)

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
