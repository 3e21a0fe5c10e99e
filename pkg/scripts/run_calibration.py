"""Heavy training runs behind the acceptance suite.

Trains the default configuration (and the three ablation variants) for each
seed, evaluates on the held-out scenes at the final resolution and caches one
JSON file per run under ``results/``.  Existing result files are reused, so an
interrupted sweep picks up where it stopped.

    python scripts/run_calibration.py                 # everything
    python scripts/run_calibration.py --variants full --seeds 0
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from deskdepth import metrics as M
from deskdepth import synthetic as S
from deskdepth import trainer as TR
from deskdepth.checkpoint import load as load_arrays
from deskdepth.config import TrainConfig

ROOT = Path(__file__).resolve().parent.parent
VARIANTS = {
    "full": [],
    "attention_only": ["loss.alpha_a=0"],
    "augmentation_only": ["model.attention_enabled=false"],
    "baseline": ["loss.alpha_a=0", "model.attention_enabled=false"],
}


def held_out(config: TrainConfig, resolution) -> list:
    d = config.data
    scenes = S.make_dataset(d.val_count, d.seed + 1, d.width, d.height)
    h, w = resolution
    return [t if t.size == (h, w) else S.rerender(t, w, h) for t in scenes]


def evaluate(model, triplets) -> dict:
    per_layout: dict[str, list] = {}
    reports = []
    for t in triplets:
        pred = model.predict_depth(t.t[None])[0]
        r = M.compute_metrics(pred, t.gt_depth, median_scaling=True)
        reports.append(r)
        per_layout.setdefault(t.spec.layout, []).append(r)
    out = {"all": M.aggregate(reports).to_dict()}
    out.update({k: M.aggregate(v).to_dict() for k, v in sorted(per_layout.items())})
    return out


def run(variant: str, seed: int, results: Path, work: Path) -> dict:
    path = results / f"{variant}_seed{seed}.json"
    if path.exists():
        return json.loads(path.read_text())
    overrides = [f"seed={seed}"] + VARIANTS[variant]
    config = TrainConfig().with_overrides(overrides)
    out_dir = work / f"{variant}_seed{seed}"
    if out_dir.exists():
        shutil.rmtree(out_dir)
    d = config.data
    train = S.make_dataset(d.train_count, d.seed, d.width, d.height)

    wall0, cpu0 = time.perf_counter(), time.process_time()
    result = TR.progressive_train(config, train, out_dir)
    wall, cpu = time.perf_counter() - wall0, time.process_time() - cpu0

    p1_end = load_arrays(out_dir / f"ckpt_p1_s{config.phase1.steps:06d}.dfck")
    pose_identical = all(
        np.array_equal(p1_end[f"param.{k}"], v.data) for k, v in result.model.group("pose").items()
    )
    losses = {1: [], 2: []}
    for r in result.reports:
        losses[r.phase].append(r.total)
    record = {
        "format_version": 1,
        "variant": variant,
        "seed": seed,
        "overrides": overrides,
        "config_digest": config.digest(),
        "wall_seconds": wall,
        "cpu_seconds": cpu,
        "resolution": list(result.resolution),
        "pose_bit_identical": pose_identical,
        "skipped_steps": sum(r.skipped for r in result.reports),
        "loss_phase1": losses[1],
        "loss_phase2": losses[2],
        "metrics": evaluate(result.model, held_out(config, result.resolution)),
    }
    results.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=1) + "\n")
    return record


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--results", type=Path, default=ROOT / "results")
    p.add_argument("--work", type=Path, default=Path("/tmp/deskdepth_runs"))
    args = p.parse_args(argv)
    for variant in args.variants:
        for seed in args.seeds:
            rec = run(variant, seed, args.results, args.work)
            m = rec["metrics"]["all"]
            print(f"{variant:18s} seed {seed}: abs_rel {m['abs_rel']:.4f} delta1 {m['delta1']:.3f} "
                  f"cpu {rec['cpu_seconds'] / 60:.1f} min", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
