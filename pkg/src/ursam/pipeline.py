"""End-to-end per-organ pipeline, dataset runner, and parameter sweep.

For one (case, organ) unit, the pipeline:

1. derives a 3D prompt box (noisy ground-truth-based provider, or an
   external box file) and extends it per axis,
2. per slice of the box's z range, augments the 2D prompt, queries the
   backend once per augmented box, binarizes the responses and
   averages them into a vote-fraction map,
3. computes the entropy map and the class-specific threshold over the
   extended box region of the slice, yielding the high-uncertainty
   mask,
4. rectifies the uncertain region (intensity filtering plus the three
   break-even strategies), and
5. scores every requested method against the ground truth and
   optionally persists all artifacts as UVOL files.

Every random draw is keyed by (seed, case, organ, slice, purpose), so
results are identical for any worker count or scheduling order.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .evaluate import METHODS, EvalRecord, dsc
from .prompts import (
    BoundingBox,
    PromptAugConfig,
    augment_prompts,
    bbox_from_mask,
    extend_box,
    simulate_manual_prompt,
)
from .rectify import (
    RectifyConfig,
    fixed_threshold,
    rectify_fn,
    rectify_fp,
    rectify_fpnc,
    rectify_ur,
)
from .seeds import derive_rng, derive_seed
from .segmenter import (
    BackendError,
    ProtocolBackend,
    ProtocolError,
    SegmentRequest,
    SyntheticBackend,
)
from .uncertainty import (
    SliceStats,
    binarize,
    class_threshold,
    ensemble,
    entropy_map,
    uncertainty_mask,
)
from .volume import (
    BinaryMask,
    ProbMap,
    UncertaintyMap,
    Volume,
    normalize_intensity,
    read_uvol,
    write_uvol,
)

__all__ = [
    "PipelineConfig",
    "OrganOutput",
    "CaseResult",
    "DatasetResult",
    "run_organ",
    "run_case",
    "run_dataset",
    "run_sweep",
    "load_dataset_dir",
    "load_case_dir",
    "load_boxes_file",
]

_RECTIFY_METHODS = ("fpc", "fnc", "fpnc", "ur")


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for a full run.

    ``aug.seed`` is ignored here: per-slice augmentation streams are
    derived from the master ``seed`` and the (case, organ, slice) keys.
    ``backend`` is ``"builtin:synthetic"`` or ``"exec:<command line>"``.
    """

    aug: PromptAugConfig = PromptAugConfig(n=3, ratio=0.01)
    rectify: RectifyConfig = RectifyConfig()
    extension: tuple[int, int, int] = (2, 10, 10)
    manual_max_shift: int = 20
    auto_box_shift: int = 3
    window: tuple[float, float] = (-500.0, 1000.0)
    backend: str = "builtin:synthetic"
    seed: int = 0
    jobs: int = 1
    timeout: float = 120.0
    methods: tuple[str, ...] = METHODS

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if not (
            self.backend == "builtin:synthetic" or self.backend.startswith("exec:")
        ):
            raise ValueError(f"unknown backend spec {self.backend!r}")
        if self.auto_box_shift < 0 or self.manual_max_shift < 0:
            raise ValueError("box jitter amounts must be non-negative")

    def params(self) -> dict:
        return {
            "n": self.aug.n,
            "ratio": self.aug.ratio,
            "alpha_h": self.rectify.alpha_h,
            "threshold_mode": self.rectify.threshold_mode,
            "lower_bound": self.rectify.lower_bound_mode,
        }


@dataclass
class OrganOutput:
    case: str
    organ: str
    prob: ProbMap
    unc: UncertaintyMap
    unc_mask: BinaryMask
    masks: dict
    stats: list
    records: list


@dataclass
class CaseResult:
    case: str
    organs: dict
    records: list
    failures: list


@dataclass
class DatasetResult:
    records: list
    failures: list
    stats: list


def _auto_box(gt: BinaryMask, cfg: PipelineConfig, case: str, organ: str) -> BoundingBox:
    """Localization stand-in: the tight box with jittered in-plane corners."""
    tight = bbox_from_mask(gt)
    if cfg.auto_box_shift == 0:
        return tight
    rng = derive_rng(cfg.seed, case, organ, "autobox")
    s = cfg.auto_box_shift
    dy0, dx0, dy1, dx1 = (int(v) for v in rng.integers(-s, s + 1, 4))
    y0, y1 = sorted((tight.y0 + dy0, tight.y1 + dy1))
    x0, x1 = sorted((tight.x0 + dx0, tight.x1 + dx1))
    _, h, w = gt.dims
    y0 = min(max(y0, 0), h - 1)
    y1 = min(max(y1, 0), h - 1)
    x0 = min(max(x0, 0), w - 1)
    x1 = min(max(x1, 0), w - 1)
    return BoundingBox(tight.z0, y0, x0, tight.z1, y1, x1)


def _tight_slice_box(gt2d: np.ndarray, z: int) -> BoundingBox:
    ys, xs = np.nonzero(gt2d)
    return BoundingBox(z, int(ys.min()), int(xs.min()), z, int(ys.max()), int(xs.max()))


def run_organ(
    image: Volume,
    gt: BinaryMask,
    cfg: PipelineConfig,
    backend,
    case: str,
    organ: str,
    box3d: BoundingBox | None = None,
) -> OrganOutput:
    """Process one organ of one case. ``image`` must be normalized.

    ``box3d`` overrides the noisy provider (external localization);
    either way the box is extended by ``cfg.extension`` before use.
    """
    dims = image.dims
    if gt.dims != dims:
        raise ValueError(f"image {dims} and ground truth {gt.dims} dims differ")
    if not gt.data.any():
        raise ValueError("ground truth mask is empty")
    if box3d is None:
        box3d = _auto_box(gt, cfg, case, organ)
    box_ext = extend_box(box3d, cfg.extension, dims)

    d, h, w = dims
    methods = cfg.methods
    want_rectify = [m for m in _RECTIFY_METHODS if m in methods]
    prob3 = np.zeros(dims, dtype=np.float32)
    unc3 = np.zeros(dims, dtype=np.float32)
    unc_mask3 = np.zeros(dims, dtype=np.uint8)
    canvases = {m: np.zeros(dims, dtype=np.uint8) for m in methods}
    stats: list[SliceStats] = []
    next_id = iter(range(10**9)).__next__

    y0, x0, y1, x1 = box_ext.plane
    region = (slice(y0, y1 + 1), slice(x0, x1 + 1))
    s_b = box_ext.area2d()

    for z in range(box_ext.z0, box_ext.z1 + 1):
        img2 = image.data[z]
        slice_box = BoundingBox(z, y0, x0, z, y1, x1)
        aug_cfg = replace(
            cfg.aug, seed=derive_seed(cfg.seed, case, organ, z)
        )
        boxes = augment_prompts(slice_box, aug_cfg, dims)
        votes = []
        for b in boxes:
            resp = backend.segment(SegmentRequest(next_id(), img2, b.plane, z=z))
            votes.append(binarize(resp.prob))
        pbar = ensemble(votes)
        u = entropy_map(pbar)
        ens2 = binarize(pbar)

        if "auto" in methods:
            resp = backend.segment(
                SegmentRequest(next_id(), img2, slice_box.plane, z=z)
            )
            canvases["auto"][z] = binarize(resp.prob)
        if "manual" in methods:
            gt2 = gt.data[z]
            if gt2.any():
                drawn = simulate_manual_prompt(
                    _tight_slice_box(gt2, z),
                    cfg.manual_max_shift,
                    derive_seed(cfg.seed, case, organ, z, "manualbox"),
                    dims,
                )
                resp = backend.segment(
                    SegmentRequest(next_id(), img2, drawn.plane, z=z)
                )
                canvases["manual"][z] = binarize(resp.prob)

        u_region = u[region]
        s_y = int(np.count_nonzero(ens2[region]))
        if cfg.rectify.threshold_mode == "fixed":
            t = fixed_threshold(u_region, cfg.rectify.fixed_fraction)
        else:
            t = class_threshold(u_region, s_y, s_b)
        unc2 = np.zeros((h, w), dtype=np.uint8)
        unc2[region] = uncertainty_mask(u_region, t)
        stats.append(SliceStats(z, box_ext.plane, s_y, s_b, float(t)))

        prob3[z] = pbar
        unc3[z] = u
        unc_mask3[z] = unc2
        if "ensemble" in methods:
            canvases["ensemble"][z] = ens2
        for m in want_rectify:
            if m == "ur":
                out2 = ens2.copy()
                out2[region] = rectify_ur(
                    img2[region], ens2[region], unc2[region], cfg.rectify
                )
            elif m == "fpc":
                out2 = rectify_fp(ens2, unc2)
            elif m == "fnc":
                out2 = rectify_fn(ens2, unc2)
            else:
                out2 = rectify_fpnc(ens2, unc2)
            canvases[m][z] = out2

    masks = {m: BinaryMask(canvases[m], image.spacing) for m in methods}
    params = cfg.params()
    records = [
        EvalRecord(case, organ, m, dsc(gt, masks[m]), params) for m in sorted(methods)
    ]
    return OrganOutput(
        case=case,
        organ=organ,
        prob=ProbMap(prob3, image.spacing),
        unc=UncertaintyMap(unc3, image.spacing),
        unc_mask=BinaryMask(unc_mask3, image.spacing),
        masks=masks,
        stats=stats,
        records=records,
    )


def write_organ_artifacts(out: OrganOutput, out_dir) -> None:
    organ_dir = os.path.join(os.fspath(out_dir), out.case, out.organ)
    os.makedirs(organ_dir, exist_ok=True)
    write_uvol(out.prob, os.path.join(organ_dir, "prob.uvol"))
    write_uvol(out.unc, os.path.join(organ_dir, "unc.uvol"))
    write_uvol(out.unc_mask, os.path.join(organ_dir, "mask_unc.uvol"))
    for method, mask in out.masks.items():
        write_uvol(mask, os.path.join(organ_dir, f"mask_{method}.uvol"))


class _BackendSource:
    """Hands each worker a backend suited to the configured spec.

    The synthetic backend is a fresh per-organ object (it is bound to
    that organ's ground truth). External processes are one per worker
    thread, created lazily and torn down at the end of the run.
    """

    def __init__(self, cfg: PipelineConfig):
        self._cfg = cfg
        self._local = threading.local()
        self._procs = []
        self._lock = threading.Lock()

    def get(self, gt: BinaryMask, case: str, organ: str):
        cfg = self._cfg
        if cfg.backend == "builtin:synthetic":
            return SyntheticBackend(
                gt, seed=derive_seed(cfg.seed, case, organ, "backend")
            )
        proc = getattr(self._local, "proc", None)
        if proc is None:
            proc = ProtocolBackend(cfg.backend[len("exec:") :], timeout=cfg.timeout)
            self._local.proc = proc
            with self._lock:
                self._procs.append(proc)
        return proc

    def close(self):
        with self._lock:
            procs, self._procs = self._procs, []
        for p in procs:
            p.close()


def run_case(
    image: Volume,
    gts: dict,
    cfg: PipelineConfig,
    case: str = "case_000",
    out_dir=None,
    boxes: dict | None = None,
) -> CaseResult:
    """Run every organ of one case sequentially."""
    norm = normalize_intensity(image, *cfg.window)
    source = _BackendSource(cfg)
    organs = {}
    records = []
    failures = []
    try:
        for organ in sorted(gts):
            gt = gts[organ]
            if not gt.data.any():
                failures.append((case, organ, "empty ground truth"))
                continue
            backend = source.get(gt, case, organ)
            try:
                out = run_organ(
                    norm,
                    gt,
                    cfg,
                    backend,
                    case,
                    organ,
                    box3d=(boxes or {}).get(organ),
                )
            except (BackendError, ProtocolError) as e:
                failures.append((case, organ, str(e)))
                continue
            organs[organ] = out
            records.extend(out.records)
            if out_dir is not None:
                write_organ_artifacts(out, out_dir)
    finally:
        source.close()
    return CaseResult(case, organs, records, failures)


def _stats_csv_bytes(stats) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ("case", "organ", "z", "y0", "x0", "y1", "x1", "s_y", "s_b", "t_unc")
    )
    for case, organ, st in sorted(stats, key=lambda r: (r[0], r[1], r[2].z)):
        writer.writerow(
            (
                case,
                organ,
                st.z,
                st.box[0],
                st.box[1],
                st.box[2],
                st.box[3],
                st.s_y,
                st.s_b,
                f"{st.t_unc:.6f}",
            )
        )
    return buf.getvalue().encode("utf-8")


def run_dataset(
    cases,
    cfg: PipelineConfig,
    out_dir=None,
    boxes_by_case: dict | None = None,
) -> DatasetResult:
    """Run many cases, parallel over (case, organ) units.

    ``cases`` is an iterable of ``(case_id, Volume, {organ: mask})``.
    Outputs are byte-identical for any ``cfg.jobs`` value: every unit
    derives its own random streams and results are ordered before any
    aggregate is written.
    """
    tasks = []
    for case_id, image, gts in cases:
        norm = normalize_intensity(image, *cfg.window)
        for organ in sorted(gts):
            tasks.append((case_id, organ, norm, gts[organ]))

    source = _BackendSource(cfg)
    records = []
    failures = []
    stats = []

    def work(task):
        case_id, organ, norm, gt = task
        if not gt.data.any():
            return ("failure", (case_id, organ, "empty ground truth"))
        backend = source.get(gt, case_id, organ)
        box3d = (boxes_by_case or {}).get(case_id, {}).get(organ)
        try:
            out = run_organ(norm, gt, cfg, backend, case_id, organ, box3d=box3d)
        except (BackendError, ProtocolError) as e:
            return ("failure", (case_id, organ, str(e)))
        if out_dir is not None:
            write_organ_artifacts(out, out_dir)
        return ("ok", out)

    try:
        if cfg.jobs == 1:
            results = [work(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(work, tasks))
    finally:
        source.close()

    for kind, payload in results:
        if kind == "failure":
            failures.append(payload)
        else:
            records.extend(payload.records)
            stats.extend((payload.case, payload.organ, st) for st in payload.stats)

    records.sort(key=lambda r: (r.case, r.organ, r.method))
    failures.sort()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "slice_stats.csv"), "wb") as f:
            f.write(_stats_csv_bytes(stats))
        if failures:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(("case", "organ", "reason"))
            writer.writerows(failures)
            with open(os.path.join(out_dir, "failures.csv"), "wb") as f:
                f.write(buf.getvalue().encode("utf-8"))
    return DatasetResult(records, failures, stats)


def run_sweep(
    cases,
    n_grid,
    ratio_grid,
    cfg: PipelineConfig,
    methods=("ensemble",),
) -> list[dict]:
    """Grid evaluation over ensemble size and perturbation ratio.

    Returns one row per (n, ratio, method, organ) plus an ``"all"``
    organ row carrying the grand mean DSC. ``cases`` may be consumed
    several times and must therefore be a sequence, not an iterator.
    """
    cases = list(cases)
    rows = []
    for n in n_grid:
        for ratio in ratio_grid:
            run_cfg = replace(
                cfg,
                aug=replace(cfg.aug, n=int(n), ratio=float(ratio)),
                methods=tuple(methods),
            )
            result = run_dataset(cases, run_cfg)
            by_method_organ: dict = {}
            by_method: dict = {}
            for rec in result.records:
                by_method_organ.setdefault((rec.method, rec.organ), []).append(rec.dsc)
                by_method.setdefault(rec.method, []).append(rec.dsc)
            for (method, organ), values in sorted(by_method_organ.items()):
                rows.append(
                    {
                        "n": int(n),
                        "ratio": float(ratio),
                        "method": method,
                        "organ": organ,
                        "mean_dsc": float(np.mean(values)),
                    }
                )
            for method, values in sorted(by_method.items()):
                rows.append(
                    {
                        "n": int(n),
                        "ratio": float(ratio),
                        "method": method,
                        "organ": "all",
                        "mean_dsc": float(np.mean(values)),
                    }
                )
    return rows


def sweep_csv_bytes(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("n", "ratio", "method", "organ", "mean_dsc"))
    for r in rows:
        writer.writerow(
            (r["n"], f"{r['ratio']:g}", r["method"], r["organ"], f"{r['mean_dsc']:.6f}")
        )
    return buf.getvalue().encode("utf-8")


def load_case_dir(case_dir):
    """Load ``image.uvol`` + ``gt/*.uvol`` from one case directory."""
    case_dir = os.fspath(case_dir)
    image = read_uvol(os.path.join(case_dir, "image.uvol"))
    if not isinstance(image, Volume):
        raise ValueError(f"{case_dir}: image.uvol is not an f32 volume")
    gt_dir = os.path.join(case_dir, "gt")
    gts = {}
    for name in sorted(os.listdir(gt_dir)):
        if not name.endswith(".uvol"):
            continue
        mask = read_uvol(os.path.join(gt_dir, name))
        if not isinstance(mask, BinaryMask):
            raise ValueError(f"{gt_dir}/{name}: expected a u8 mask")
        gts[name[: -len(".uvol")]] = mask
    if not gts:
        raise ValueError(f"no gt masks found under {gt_dir}")
    return image, gts


def load_dataset_dir(dataset_dir):
    """Yield ``(case_id, Volume, gts)`` for each case subdirectory."""
    dataset_dir = os.fspath(dataset_dir)
    case_ids = sorted(
        name
        for name in os.listdir(dataset_dir)
        if os.path.isdir(os.path.join(dataset_dir, name))
    )
    if not case_ids:
        raise ValueError(f"no case directories under {dataset_dir}")
    out = []
    for case_id in case_ids:
        image, gts = load_case_dir(os.path.join(dataset_dir, case_id))
        out.append((case_id, image, gts))
    return out


def load_boxes_file(path) -> dict:
    """External localization boxes: {organ: [z0, y0, x0, z1, y1, x1]}."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: box file must be a JSON object")
    out = {}
    for organ, coords in raw.items():
        if not (isinstance(coords, list) and len(coords) == 6):
            raise ValueError(f"{path}: organ {organ!r} needs 6 coordinates")
        out[str(organ)] = BoundingBox.from_tuple(coords)
    return out
