"""Command line interface.

Subcommands: ``gen-phantom`` (synthetic dataset), ``pipeline`` (full
run on one case or a dataset), ``sweep`` (n x ratio grid), ``rectify``
(rectification on precomputed maps), ``dsc`` (compare two masks),
``plot`` (per-organ tables and text bars from a report).

Exit codes: 0 on success, 1 on a validation or usage error, 2 on a
backend failure. A ``--config`` file holds ``key = value`` lines
mirroring the long flags of the chosen subcommand; explicit flags win
over file values.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .evaluate import METHODS, dsc, write_report, write_summary_json
from .phantom import PhantomSpec, gen_phantom
from .pipeline import (
    PipelineConfig,
    load_boxes_file,
    load_case_dir,
    load_dataset_dir,
    run_case,
    run_dataset,
    run_sweep,
    sweep_csv_bytes,
)
from .prompts import BoundingBox, PromptAugConfig
from .rectify import (
    RECTIFY_MODES,
    RectifyConfig,
    fixed_threshold,
    rectify_fn,
    rectify_fp,
    rectify_fpnc,
    rectify_ur,
)
from .segmenter import BackendError, ProtocolError
from .uncertainty import class_threshold, uncertainty_mask
from .volume import (
    BinaryMask,
    Volume,
    normalize_intensity,
    read_uvol,
    write_uvol,
)

__all__ = ["main", "cli_main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; route through our codes.
    def error(self, message):
        raise UsageError(message)


def _ints(text: str):
    return tuple(int(v) for v in text.split(","))


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


def _add_rectify_flags(p):
    p.add_argument("--alpha-h", type=float, default=1.1,
                   help="upper intensity bound factor")
    p.add_argument("--threshold-mode", choices=("class_specific", "fixed"),
                   default="class_specific")
    p.add_argument("--fixed-fraction", type=float, default=0.5,
                   help="range fraction for --threshold-mode fixed")
    p.add_argument("--lower-bound", choices=("paper", "mean"), default="paper",
                   help="lower intensity bound: half the mean difference, or the midpoint")


def _add_run_flags(p):
    p.add_argument("--backend", default="builtin:synthetic",
                   help='"builtin:synthetic" or "exec:<command line>"')
    p.add_argument("--n", type=int, default=3, help="augmented prompts per slice")
    p.add_argument("--ratio", type=float, default=0.01,
                   help="perturbation ratio relative to the image side")
    p.add_argument("--aug-mode", choices=("corner", "translate"), default="corner")
    p.add_argument("--extension", type=_ints, default=(2, 10, 10),
                   metavar="EZ,EY,EX")
    p.add_argument("--manual-shift", type=int, default=20,
                   help="max jitter of the simulated hand-drawn box")
    p.add_argument("--auto-shift", type=int, default=3,
                   help="max jitter of the localization-style box provider")
    p.add_argument("--window", type=_floats, default=(-500.0, 1000.0),
                   metavar="LO,HI")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timeout", type=float, default=120.0,
                   help="per-request backend timeout, seconds")
    _add_rectify_flags(p)


def _build_config(args, methods=None) -> PipelineConfig:
    return PipelineConfig(
        aug=PromptAugConfig(n=args.n, ratio=args.ratio, mode=args.aug_mode),
        rectify=RectifyConfig(
            alpha_h=args.alpha_h,
            threshold_mode=args.threshold_mode,
            fixed_fraction=args.fixed_fraction,
            lower_bound_mode=args.lower_bound,
        ),
        extension=args.extension,
        manual_max_shift=args.manual_shift,
        auto_box_shift=args.auto_shift,
        window=args.window,
        backend=args.backend,
        seed=args.seed,
        jobs=args.jobs,
        timeout=args.timeout,
        methods=tuple(methods) if methods else METHODS,
    )


def _cmd_gen_phantom(args) -> int:
    spec = PhantomSpec(cases=args.cases, organs=args.organs, dims=args.dims)
    written = gen_phantom(spec, args.seed, args.out)
    print(f"wrote {len(written)} cases under {args.out}")
    return 0


def _cmd_pipeline(args) -> int:
    if bool(args.dataset) == bool(args.image):
        raise UsageError("pass either --dataset or --image with --gt-dir")
    methods = None
    if args.mode:
        methods = ("auto", "ensemble", "manual", args.mode)
    cfg = _build_config(args, methods=methods)

    if args.dataset:
        cases = load_dataset_dir(args.dataset)
        boxes_by_case = None
        if args.boxes:
            boxes_by_case = {}
            for case_id, _, _ in cases:
                path = os.path.join(args.boxes, f"{case_id}.json")
                if os.path.exists(path):
                    boxes_by_case[case_id] = load_boxes_file(path)
        result = run_dataset(cases, cfg, out_dir=args.out_dir,
                             boxes_by_case=boxes_by_case)
        records, failures = result.records, result.failures
    else:
        if not args.gt_dir:
            raise UsageError("--image needs --gt-dir")
        image, gts = load_case_dir_like(args.image, args.gt_dir)
        if not isinstance(image, Volume):
            raise UsageError(f"{args.image} is not an f32 volume")
        boxes = load_boxes_file(args.boxes) if args.boxes else None
        case = run_case(image, gts, cfg, case=args.case_id,
                        out_dir=args.out_dir, boxes=boxes)
        records, failures = case.records, case.failures

    if args.report:
        write_report(records, args.report, fmt=args.report_format)
    if args.summary:
        write_summary_json(records, args.summary)
    for case_id, organ, reason in failures:
        print(f"failed: {case_id}/{organ}: {reason}", file=sys.stderr)
    if not records and failures:
        return 2
    _print_method_means(records)
    return 2 if failures else 0


def load_case_dir_like(image_path, gt_dir):
    """Single-case loading when the image sits outside a case directory."""
    image = read_uvol(image_path)
    gts = {}
    for name in sorted(os.listdir(gt_dir)):
        if not name.endswith(".uvol"):
            continue
        mask = read_uvol(os.path.join(gt_dir, name))
        if not isinstance(mask, BinaryMask):
            raise UsageError(f"{gt_dir}/{name}: expected a u8 mask")
        gts[name[: -len(".uvol")]] = mask
    if not gts:
        raise UsageError(f"no gt masks found under {gt_dir}")
    return image, gts


def _print_method_means(records) -> None:
    by_method = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec.dsc)
    for method in sorted(by_method):
        print(f"{method}: mean dsc {np.mean(by_method[method]):.4f} "
              f"({len(by_method[method])} organs)")


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    cases = load_dataset_dir(args.dataset)
    rows = run_sweep(cases, args.n_grid, args.ratio_grid, cfg,
                     methods=tuple(args.methods.split(",")))
    payload = sweep_csv_bytes(rows)
    if args.out:
        with open(args.out, "wb") as f:
            f.write(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return 0


def _cmd_rectify(args) -> int:
    image = read_uvol(args.image)
    if not isinstance(image, Volume):
        raise UsageError(f"{args.image} is not an f32 volume")
    if args.window != "none":
        lo, hi = _floats(args.window)
        image = normalize_intensity(image, lo, hi)
    mask = read_uvol(args.mask)
    if not isinstance(mask, BinaryMask):
        raise UsageError(f"{args.mask} is not a u8 mask")
    unc = read_uvol(args.unc, kind="unc")
    if image.dims != mask.dims or image.dims != unc.dims:
        raise UsageError("image, mask and uncertainty dims differ")
    box = BoundingBox.from_tuple(_ints(args.box))
    d, h, w = image.dims
    if box.z1 >= d or box.y1 >= h or box.x1 >= w:
        raise UsageError(f"box {box.as_tuple()} outside volume dims {image.dims}")

    cfg = RectifyConfig(
        alpha_h=args.alpha_h,
        mode=args.mode,
        threshold_mode=args.threshold_mode,
        fixed_fraction=args.fixed_fraction,
        lower_bound_mode=args.lower_bound,
    )
    out = np.array(mask.data, copy=True)
    region = (slice(box.y0, box.y1 + 1), slice(box.x0, box.x1 + 1))
    s_b = box.area2d()
    for z in range(box.z0, box.z1 + 1):
        u_region = unc.data[z][region]
        ens2 = mask.data[z]
        s_y = int(np.count_nonzero(ens2[region]))
        if cfg.threshold_mode == "fixed":
            t = fixed_threshold(u_region, cfg.fixed_fraction)
        else:
            t = class_threshold(u_region, s_y, s_b)
        unc2 = np.zeros((h, w), dtype=np.uint8)
        unc2[region] = uncertainty_mask(u_region, t)
        if cfg.mode == "ur":
            out2 = ens2.copy()
            out2[region] = rectify_ur(
                image.data[z][region], ens2[region], unc2[region], cfg
            )
        elif cfg.mode == "fpc":
            out2 = rectify_fp(ens2, unc2)
        elif cfg.mode == "fnc":
            out2 = rectify_fn(ens2, unc2)
        else:
            out2 = rectify_fpnc(ens2, unc2)
        out[z] = out2
    write_uvol(BinaryMask(out, image.spacing), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_dsc(args) -> int:
    a = read_uvol(args.a)
    b = read_uvol(args.b)
    print(f"{dsc(a.data, b.data):.6f}")
    return 0


def _cmd_plot(args) -> int:
    with open(args.report, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise UsageError(f"{args.report} has no rows")
    by_organ_method = {}
    for row in rows:
        key = (row["organ"], row["method"])
        by_organ_method.setdefault(key, []).append(float(row["dsc"]))
    means = {k: float(np.mean(v)) for k, v in by_organ_method.items()}
    organs = sorted({k[0] for k in means})
    methods = sorted({k[1] for k in means})

    os.makedirs(args.out_dir, exist_ok=True)
    table_path = os.path.join(args.out_dir, "per_organ.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["organ"] + methods)
        for organ in organs:
            writer.writerow(
                [organ]
                + [f"{means.get((organ, m), float('nan')):.6f}" for m in methods]
            )

    bars_path = os.path.join(args.out_dir, "per_organ.txt")
    width = 40
    with open(bars_path, "w", encoding="utf-8") as f:
        for organ in organs:
            f.write(f"{organ}\n")
            for m in methods:
                v = means.get((organ, m))
                if v is None:
                    continue
                bar = "#" * int(round(v * width))
                f.write(f"  {m:<9} {bar:<{width}} {v:.4f}\n")
            f.write("\n")
    print(f"wrote {table_path} and {bars_path}")
    return 0


def _build_parsers():
    top = _Parser(prog="ursam", description=__doc__, allow_abbrev=False)
    sub = top.add_subparsers(dest="command")

    p = sub.add_parser("gen-phantom", allow_abbrev=False,
                       help="generate a synthetic dataset")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--organs", type=int, default=4)
    p.add_argument("--dims", type=_ints, default=(64, 64, 64), metavar="D,H,W")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_gen_phantom, required_flags=("out",))

    p = sub.add_parser("pipeline", allow_abbrev=False,
                       help="run the full pipeline")
    p.add_argument("--dataset", help="dataset directory of case subdirs")
    p.add_argument("--image", help="single-case image UVOL")
    p.add_argument("--gt-dir", help="single-case directory of gt masks")
    p.add_argument("--case-id", default="case_000")
    p.add_argument("--boxes",
                   help="external localization boxes: JSON file (single case) "
                        "or directory of <case>.json files (dataset)")
    p.add_argument("--mode", choices=RECTIFY_MODES, default=None,
                   help="restrict rectification to one strategy")
    p.add_argument("--out-dir", help="artifact output directory")
    p.add_argument("--report", help="write per-organ report here")
    p.add_argument("--report-format", choices=("csv", "md"), default="csv")
    p.add_argument("--summary", help="write a JSON mean-DSC summary here")
    p.add_argument("--config")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_pipeline, required_flags=())

    p = sub.add_parser("sweep", allow_abbrev=False,
                       help="grid over ensemble size and perturbation ratio")
    p.add_argument("--dataset")
    p.add_argument("--n-grid", type=_ints, default=(3, 5, 7), metavar="N1,N2,...")
    p.add_argument("--ratio-grid", type=_floats,
                   default=(0.005, 0.01, 0.03, 0.05, 0.1), metavar="R1,R2,...")
    p.add_argument("--methods", default="ensemble",
                   help="comma-separated methods to score per cell")
    p.add_argument("--out", help="sweep CSV path (stdout when omitted)")
    p.add_argument("--config")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_sweep, required_flags=("dataset",))

    p = sub.add_parser("rectify", allow_abbrev=False,
                       help="rectify a precomputed mask with its uncertainty map")
    p.add_argument("--image")
    p.add_argument("--mask", help="ensemble mask UVOL (u8)")
    p.add_argument("--unc", help="uncertainty map UVOL (f32)")
    p.add_argument("--box", help="z0,y0,x0,z1,y1,x1 inclusive region")
    p.add_argument("--out", help="output mask UVOL")
    p.add_argument("--mode", choices=RECTIFY_MODES, default="ur")
    p.add_argument("--window", default="-500,1000",
                   help='intensity window "LO,HI", or "none" if already normalized')
    p.add_argument("--config")
    _add_rectify_flags(p)
    p.set_defaults(func=_cmd_rectify,
                   required_flags=("image", "mask", "unc", "box", "out"))

    p = sub.add_parser("dsc", allow_abbrev=False,
                       help="Dice similarity of two UVOL masks")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=_cmd_dsc, required_flags=())

    p = sub.add_parser("plot", allow_abbrev=False,
                       help="per-organ mean-DSC table and text bars from a report")
    p.add_argument("--report", help="report CSV from the pipeline")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_plot, required_flags=("report", "out_dir"))

    return top, dict(sub.choices), sub


def _parse_config_file(path) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return values


def _apply_config(parser, path) -> None:
    values = _parse_config_file(path)
    actions = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                actions[opt[2:]] = action
    defaults = {}
    for key, raw in values.items():
        if key == "config":
            continue
        action = actions.get(key)
        if action is None:
            raise UsageError(f"config key {key!r} does not match any flag")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[action.dest] = action.type(raw)
            except (TypeError, ValueError) as e:
                raise UsageError(f"config key {key!r}: {e}") from e
        else:
            defaults[action.dest] = raw
        if action.choices and defaults[action.dest] not in action.choices:
            raise UsageError(
                f"config key {key!r}: {defaults[action.dest]!r} "
                f"not one of {sorted(action.choices)}"
            )
    parser.set_defaults(**defaults)


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    top, subparsers, _ = _build_parsers()
    try:
        # Config files act as defaults, so they must be applied to the
        # subcommand parser before the real parse.
        if argv and argv[0] in subparsers and "--config" in argv:
            idx = argv.index("--config")
            if idx + 1 >= len(argv):
                raise UsageError("--config needs a path")
            _apply_config(subparsers[argv[0]], argv[idx + 1])
        args = top.parse_args(argv)
        if not getattr(args, "command", None):
            top.print_usage(sys.stderr)
            return 1
        for flag in args.required_flags:
            if getattr(args, flag, None) in (None, ""):
                raise UsageError(f"--{flag.replace('_', '-')} is required")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (BackendError, ProtocolError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
