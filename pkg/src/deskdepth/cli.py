"""``deskdepth`` command line: synth, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

# Self-consistency bound for in-memory triplets, plus half an 8-bit step for
# data that went through PPM quantization.
SELF_CHECK_TOL = 1e-3
QUANT_SLACK = 0.5 / 255.0

logger = logging.getLogger("deskdepth")


class CheckFailed(Exception):
    pass


def _emit(payload: dict, path: str | None) -> None:
    text = json.dumps({"format_version": FORMAT_VERSION, **payload}, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _load_config(args):
    from .config import TrainConfig

    cfg = TrainConfig.load(args.config) if getattr(args, "config", None) else TrainConfig()
    return cfg.with_overrides(getattr(args, "set", None) or [])


# ---------------------------------------------------------------- commands
def cmd_synth(args) -> int:
    from . import synthetic as S

    cfg = _load_config(args)
    width = args.width or cfg.data.width
    height = args.height or cfg.data.height
    count = args.count if args.count is not None else cfg.data.train_count
    seed = args.seed if args.seed is not None else cfg.data.seed
    if count < 1:
        raise ValueError("--count must be at least 1")
    triplets = S.make_dataset(count, seed, width, height)
    manifest = S.write_dataset(triplets, Path(args.out), seed)
    print(f"wrote {manifest['count']} triplets ({width}x{height}, seed {seed}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from . import synthetic as S
    from . import trainer as TR

    cfg = _load_config(args)  # schema problems surface here, before any compute
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    triplets = S.read_dataset(Path(args.data))
    if args.val:
        val = S.read_dataset(Path(args.val))
    else:
        h, w = triplets[0].size
        val = S.make_dataset(cfg.preview_count, cfg.data.seed + 1, w, h)
    (out / "config.json").write_text(cfg.to_json() + "\n")

    def progress(r):
        if r.step % 100 == 0 or r.step == 1:
            flag = "" if r.second_pass else " (no aug pass)"
            print(f"phase {r.phase} step {r.step:5d} loss {r.total:.5f} mask {r.mask_mean:.3f}{flag}", flush=True)

    result = TR.progressive_train(cfg, triplets, out, resume=args.resume, on_report=progress)
    h, w = result.resolution
    previews_src = [t if t.size == (h, w) else S.rerender(t, w, h) for t in val[: cfg.preview_count]]
    previews = TR.write_previews(result.model, previews_src, out / "previews", cfg.preview_count)
    first, last = result.reports[0] if result.reports else None, result.reports[-1] if result.reports else None
    summary = {
        "command": "train",
        "final_checkpoint": str(result.final_checkpoint),
        "resolution": list(result.resolution),
        "steps_run": len(result.reports),
        "initial_loss": first.total if first else None,
        "final_loss": last.total if last else None,
        "skipped_steps": sum(r.skipped for r in result.reports),
        "seconds": result.seconds,
        "previews": [str(p) for p in previews],
    }
    _emit(summary, str(out / "summary.json"))
    print(f"done in {result.seconds:.0f}s; final checkpoint {result.final_checkpoint}")
    return EXIT_OK


def _self_check(args) -> int:
    from . import synthetic as S

    triplets = S.read_dataset(Path(args.data))
    tol = SELF_CHECK_TOL + QUANT_SLACK
    errors = [S.self_consistency_error(t) for t in triplets]
    worst = max(errors)
    ok = worst < tol
    print(f"GT self-consistency over {len(errors)} triplets: mean {np.mean(errors):.2e}, worst {worst:.2e} "
          f"(tolerance {tol:.2e}) -> {'ok' if ok else 'FAIL'}")
    _emit({"command": "eval", "self_check": {"errors": errors, "worst": worst, "tolerance": tol, "passed": ok}},
          args.json)
    if not ok:
        raise CheckFailed("ground-truth self-consistency check failed")
    return EXIT_OK


def evaluate(model, triplets, cap: float = 80.0, median_scaling: bool = True, resolution=None):
    """Per-image metrics pooled by pixel; ``resolution`` guards against mismatched inputs."""
    from . import metrics as M

    reports = []
    for t in triplets:
        if t.gt_depth is None:
            raise ValueError("evaluation needs ground-truth depth")
        if resolution is not None and tuple(resolution) != t.size:
            raise ValueError(f"resolution mismatch: checkpoint trained at {tuple(resolution)}, data is {t.size}")
        pred = model.predict_depth(t.t[None])[0]
        reports.append(M.compute_metrics(pred, t.gt_depth, cap=cap, median_scaling=median_scaling))
    return M.aggregate(reports)


def cmd_eval(args) -> int:
    if args.self_check:
        return _self_check(args)
    if not args.ckpt:
        raise ValueError("eval needs --ckpt (or --self-check)")
    from . import synthetic as S
    from .trainer import load_checkpoint

    if args.eigen_crop:
        logger.warning("--eigen-crop has no effect on synthetic data and is ignored")
    loaded = load_checkpoint(args.ckpt)
    triplets = S.read_dataset(Path(args.data))
    report = evaluate(loaded.model, triplets, args.cap, args.median_scale, loaded.resolution)
    print(report.table())
    _emit({"command": "eval", "checkpoint": args.ckpt, "data": args.data, "cap": args.cap,
           "median_scaling": args.median_scale, "n_images": len(triplets), "metrics": report.to_dict()}, args.json)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .imageio import false_color, read_ppm, write_pfm, write_ppm
    from .trainer import load_checkpoint

    loaded = load_checkpoint(args.ckpt)
    image = read_ppm(args.image)
    if image.shape[1:] != tuple(loaded.resolution):
        raise ValueError(f"resolution mismatch: checkpoint trained at {tuple(loaded.resolution)}, "
                         f"image is {image.shape[1:]}")
    depth = loaded.model.predict_depth(image[None])[0, 0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    pfm, ppm = out / f"{stem}_depth.pfm", out / f"{stem}_depth.ppm"
    write_pfm(pfm, depth.astype(np.float32))
    write_ppm(ppm, false_color(1.0 / depth))
    print(f"wrote {pfm} and {ppm}")
    _emit({"command": "infer", "depth": str(pfm), "preview": str(ppm),
           "depth_min": float(depth.min()), "depth_max": float(depth.max())}, args.json)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck as G

    reports = G.run_suite(args.filter, seed=args.seed)
    if not reports:
        raise ValueError(f"no gradient checks match {args.filter!r}")
    print(G.format_table(reports))
    failed = [r.name for r in reports if not r.passed]
    if args.json:
        _emit({"command": "gradcheck", "filter": args.filter, "failed": failed,
               "results": [{"name": r.name, "max_rel_err": r.max_rel_err, "tolerance": r.tolerance,
                            "seconds": r.seconds, "passed": r.passed} for r in reports]}, args.json)
    if failed:
        raise CheckFailed(f"gradient checks failed: {', '.join(failed)}")
    return EXIT_OK


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskdepth", description="Self-supervised monocular depth at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="training config JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. loss.alpha_a=0")

    sp = sub.add_parser("synth", help="write a synthetic triplet dataset")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="progressive two-phase training")
    with_config(sp)
    sp.add_argument("--data", required=True, help="dataset directory written by synth")
    sp.add_argument("--val", help="dataset for preview images (default: fresh held-out scenes)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="depth metrics against ground truth")
    sp.add_argument("--ckpt")
    sp.add_argument("--data", required=True)
    sp.add_argument("--median-scale", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--cap", type=float, default=80.0)
    sp.add_argument("--eigen-crop", action="store_true", help="accepted for compatibility; ignored")
    sp.add_argument("--self-check", action="store_true", help="check ground-truth warps instead of a model")
    sp.add_argument("--json", help="write the JSON report here instead of stdout")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="depth for a single PPM image")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--filter", help="substring / glob of case names")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .imageio import FormatError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConfigError, FormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
