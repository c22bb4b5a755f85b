import base64
import json

import numpy as np
import pytest

from sam_bridge.frames import (
    PROTO,
    FrameError,
    error_line,
    handshake_line,
    parse_request,
    response_line,
)


def make_request(rid=1, h=3, w=4, box=(0, 0, 2, 3), **extra):
    sl = np.arange(h * w, dtype=np.float32).reshape(h, w)
    obj = {
        "id": rid,
        "h": h,
        "w": w,
        "slice_b64": base64.b64encode(sl.astype("<f4").tobytes()).decode("ascii"),
        "box": list(box),
    }
    obj.update(extra)
    return json.dumps(obj), sl


def test_handshake_line():
    obj = json.loads(handshake_line("demo"))
    assert obj == {"proto": PROTO, "name": "demo"}
    assert "\n" not in handshake_line("demo")


def test_parse_request_roundtrip():
    line, sl = make_request(rid=42, h=5, w=2, box=(1, 0, 4, 1))
    rid, got, box = parse_request(line)
    assert rid == 42
    assert got.dtype == np.float32
    assert np.array_equal(got, sl)
    assert box == (1, 0, 4, 1)


def test_parse_request_accepts_bytes_and_extra_fields():
    line, sl = make_request(rid=7, z=13, mood="fine")
    rid, got, box = parse_request(line.encode("utf-8"))
    assert rid == 7
    assert np.array_equal(got, sl)


def test_parse_request_single_pixel():
    line, _ = make_request(h=1, w=1, box=(0, 0, 0, 0))
    rid, got, box = parse_request(line)
    assert got.shape == (1, 1)
    assert box == (0, 0, 0, 0)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda o: o.pop("id"),
        lambda o: o.pop("h"),
        lambda o: o.pop("slice_b64"),
        lambda o: o.pop("box"),
        lambda o: o.__setitem__("id", "one"),
        lambda o: o.__setitem__("id", True),
        lambda o: o.__setitem__("h", 0),
        lambda o: o.__setitem__("w", -2),
        lambda o: o.__setitem__("h", 2.5),
        lambda o: o.__setitem__("slice_b64", "!!!not base64!!!"),
        lambda o: o.__setitem__("slice_b64", 17),
        lambda o: o.__setitem__("box", [0, 0, 2]),
        lambda o: o.__setitem__("box", [0, 0, 2, 99]),
        lambda o: o.__setitem__("box", [2, 0, 0, 3]),
        lambda o: o.__setitem__("box", [0, 0, 2, True]),
        lambda o: o.__setitem__("box", "0,0,2,3"),
    ],
)
def test_parse_request_rejects_bad_fields(mutate):
    line, _ = make_request()
    obj = json.loads(line)
    mutate(obj)
    with pytest.raises(FrameError):
        parse_request(json.dumps(obj))


def test_parse_request_payload_length_mismatch():
    line, _ = make_request()
    obj = json.loads(line)
    raw = base64.b64decode(obj["slice_b64"])
    obj["slice_b64"] = base64.b64encode(raw[:-4]).decode("ascii")
    with pytest.raises(FrameError, match="payload"):
        parse_request(json.dumps(obj))


def test_parse_request_not_json():
    with pytest.raises(FrameError):
        parse_request("this is not json")
    with pytest.raises(FrameError):
        parse_request(b"\xff\xfe garbage bytes")
    with pytest.raises(FrameError):
        parse_request("[1, 2, 3]")


def test_frame_error_keeps_recoverable_id():
    line, _ = make_request(rid=9, box=(0, 0, 99, 99))
    try:
        parse_request(line)
    except FrameError as e:
        assert e.rid == 9
    else:
        pytest.fail("expected FrameError")


def test_frame_error_without_id():
    try:
        parse_request("{}")
    except FrameError as e:
        assert e.rid is None
    else:
        pytest.fail("expected FrameError")


def test_response_line_roundtrip():
    prob = np.linspace(0.0, 1.0, 12, dtype=np.float32).reshape(3, 4)
    obj = json.loads(response_line(5, prob))
    assert obj["id"] == 5
    got = np.frombuffer(base64.b64decode(obj["prob_b64"]), dtype="<f4")
    assert np.array_equal(got.reshape(3, 4), prob)


def test_response_line_rejects_bad_values():
    with pytest.raises(ValueError):
        response_line(1, np.full((2, 2), 1.5, dtype=np.float32))
    with pytest.raises(ValueError):
        response_line(1, np.full((2, 2), np.nan, dtype=np.float32))
    with pytest.raises(ValueError):
        response_line(1, np.zeros(4, dtype=np.float32))


def test_error_line_ids():
    assert json.loads(error_line(3, "bad"))["id"] == 3
    assert json.loads(error_line(None, "worse"))["id"] == -1
    assert json.loads(error_line(7, "oops"))["error"] == "oops"
