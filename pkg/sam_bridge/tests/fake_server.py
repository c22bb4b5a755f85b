"""Child-process entry that serves canned masks, for protocol tests.

Runs the real serve loop with a stand-in for the model so the tests
don't need torch or a checkpoint.
"""

import argparse

import numpy as np

from sam_bridge.server import serve


def _segment_ok(sl, box):
    y0, x0, y1, x1 = box
    prob = np.full(sl.shape, 0.1, dtype=np.float32)
    prob[y0 : y1 + 1, x0 : x1 + 1] = 0.9
    return prob


def _segment_raise(sl, box):
    raise RuntimeError("model exploded")


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("mode", choices=("ok", "raise"))
    args = p.parse_args()
    fn = _segment_ok if args.mode == "ok" else _segment_raise
    raise SystemExit(serve(fn, name="fake-bridge"))


if __name__ == "__main__":
    main()
