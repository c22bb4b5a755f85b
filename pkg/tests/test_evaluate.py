import json

import numpy as np
import pytest

from ursam.evaluate import (
    EvalRecord,
    dsc,
    evaluate_case,
    report_csv_bytes,
    write_report,
    write_summary_json,
)


def test_dsc_pinned_value():
    g = np.zeros(16, dtype=bool)
    s = np.zeros(16, dtype=bool)
    g[:4] = True          # |G| = 4
    s[1:7] = True         # |S| = 6, overlap 3
    assert dsc(g, s) == pytest.approx(2 * 3 / (4 + 6))


def test_dsc_conventions(rng):
    empty = np.zeros((3, 3), dtype=np.uint8)
    some = np.array(empty)
    some[0, 0] = 1
    assert dsc(empty, empty) == 1.0
    assert dsc(empty, some) == 0.0
    assert dsc(some, empty) == 0.0
    for _ in range(100):
        a = rng.random((5, 5)) > 0.5
        b = rng.random((5, 5)) > 0.5
        v = dsc(a, b)
        assert 0.0 <= v <= 1.0
        assert v == dsc(b, a)
        assert dsc(a, a) == 1.0
        perm = rng.permutation(25)
        assert dsc(a.reshape(-1)[perm], b.reshape(-1)[perm]) == pytest.approx(v)
    with pytest.raises(ValueError):
        dsc(np.zeros((2, 2)), np.zeros((3, 3)))


def test_eval_record_validation():
    with pytest.raises(ValueError):
        EvalRecord("c", "o", "unknown", 0.5)
    with pytest.raises(ValueError):
        EvalRecord("c", "o", "ur", 1.5)


def test_report_bytes_deterministic_and_sorted():
    recs = [
        EvalRecord("case_001", "organ_00", "ur", 0.75, {"n": 3, "ratio": 0.01}),
        EvalRecord("case_000", "organ_01", "auto", 0.5, {"n": 3, "ratio": 0.01}),
        EvalRecord("case_000", "organ_00", "ensemble", 0.625, {"n": 3, "ratio": 0.01}),
    ]
    a = report_csv_bytes(recs)
    b = report_csv_bytes(list(reversed(recs)))
    assert a == b
    lines = a.decode().strip().split("\n")
    assert lines[0] == "case,organ,method,dsc,n,ratio,alpha_h,threshold_mode,lower_bound"
    assert lines[1].startswith("case_000,organ_00,ensemble,0.625000,3,0.01")
    assert lines[-1].startswith("case_001,organ_00,ur,0.750000")


def test_evaluate_case_and_writers(tmp_path, rng):
    gt = (rng.random((4, 4, 4)) > 0.5).astype(np.uint8)
    cands = {"ur": gt, "auto": np.zeros_like(gt)}
    recs = evaluate_case(gt, cands, case="c0", organ="o0", params={"n": 1})
    assert [r.method for r in recs] == ["auto", "ur"]
    assert recs[1].dsc == 1.0

    csv_path = tmp_path / "r.csv"
    write_report(recs, csv_path)
    assert csv_path.read_bytes() == report_csv_bytes(recs)
    md_path = tmp_path / "r.md"
    write_report(recs, md_path, fmt="md")
    text = md_path.read_text()
    assert text.startswith("| case | organ |")
    assert "| ur |" in text
    with pytest.raises(ValueError):
        write_report(recs, tmp_path / "r.x", fmt="xml")

    js_path = tmp_path / "s.json"
    write_summary_json(iter(recs), js_path)
    summary = json.loads(js_path.read_text())
    assert summary["records"] == 2
    assert summary["mean_dsc"]["ur"] == 1.0
