"""Two-pass training step and the two-phase progressive schedule."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import losses as L
from . import synthetic as S
from . import tensor as T
from .augment import augment_batch
from .config import ConfigError, TrainConfig
from .geometry import Intrinsics, warp
from .imageio import false_color, write_ppm
from .networks import DepthPoseNet
from .optim import Adam

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    target: np.ndarray  # (N,3,H,W)
    sources: list  # two (N,3,H,W) arrays
    intrinsics: Intrinsics

    @classmethod
    def from_triplets(cls, triplets) -> Batch:
        k = triplets[0].intrinsics
        if any(t.intrinsics != k for t in triplets):
            raise ValueError("a batch must share one set of intrinsics")
        return cls(
            target=np.stack([t.t for t in triplets]),
            sources=[np.stack([t.s1 for t in triplets]), np.stack([t.s2 for t in triplets])],
            intrinsics=k,
        )

    @property
    def size(self) -> int:
        return self.target.shape[0]


@dataclass
class StepReport:
    phase: int
    step: int
    total: float
    photometric: float
    smoothness: float
    augmentation: float
    regularization: float
    weighted: dict
    mask_mean: float
    mask_metric: float
    grad_norm: float
    second_pass: bool
    skipped: bool
    seconds: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def step_rng(seed: int, phase: int, step: int) -> np.random.Generator:
    """Every random choice of a step comes from (seed, phase, step), which makes resume exact."""
    return np.random.default_rng([seed, phase, step])


def compute_loss(model: DepthPoseNet, batch: Batch, weights: L.LossWeights, aug_config, rng):
    """Both forward passes and the weighted objective; returns (loss, breakdown, second_pass_ran)."""
    n = batch.size
    h, w = batch.target.shape[2:]
    target = T.Tensor(batch.target)
    sources = [T.Tensor(s) for s in batch.sources]
    out = model.forward_full(target, sources)

    src_all = T.concat(sources, axis=0)
    tgt_all = T.concat([target] * len(sources), axis=0)
    pose_all = T.concat(out["poses"], axis=0)

    photo_maps, smooth_terms = [], []
    finest_pe = None
    for s, disp in enumerate(out["disp"]):
        disp_full = disp if s == 0 else T.resize(disp, h, w, "bilinear")
        depth = model.to_depth(disp_full)
        warped = warp(src_all, T.concat([depth] * len(sources), axis=0), pose_all, batch.intrinsics)
        err = L.pe(warped, tgt_all, weights.alpha)
        per_source = [err[k * n : (k + 1) * n] for k in range(len(sources))]
        photo_maps.append(L.min_reprojection(per_source))
        if s == 0:
            finest_pe = per_source
        if weights.alpha_s > 0:
            img_s = batch.target
            if s > 0:
                with T.no_grad():
                    img_s = T.resize(T.Tensor(batch.target), disp.shape[2], disp.shape[3], "bilinear").data
            smooth_terms.append(L.smoothness(disp, img_s))

    with T.no_grad():
        static = L.pe(src_all, tgt_all, weights.alpha).data
    static_maps = [static[k * n : (k + 1) * n] for k in range(len(sources))]
    mask = L.automask(finest_pe, static_maps)
    reg_term, mask_metric = None, 0.0
    if weights.alpha_r > 0:
        reg_term, mask_metric = L.mask_regularization(
            mask, photo_maps[0], np.minimum.reduce(static_maps)
        )
    else:
        mask_metric = float(np.mean(1.0 - mask.data))

    aug_term = None
    second_pass = weights.alpha_a > 0
    if second_pass:
        d_first = out["depth"][0].data  # gradient-stopped label
        images, d_true, valid, _ = augment_batch(batch.target, d_first, aug_config, rng)
        d_out = model.to_depth(model.predict_disparity(images)[0])
        aug_term = L.augmentation_loss(d_true, d_out, valid)

    total, breakdown = L.total_loss(
        photo_maps, smooth_terms, mask, weights, aug_term=aug_term, reg_term=reg_term, mask_metric=mask_metric
    )
    return total, breakdown, second_pass


def train_step(model: DepthPoseNet, batch: Batch, optimizer: Adam, config: TrainConfig, phase: int, step: int,
               frozen=()) -> StepReport:
    start = time.perf_counter()
    rng = step_rng(config.seed, phase, step)
    model.zero_grad()
    total, bd, second = compute_loss(model, batch, config.loss, config.aug, rng)
    skipped = not math.isfinite(bd.total)
    grad_norm = float("nan")
    if not skipped:
        T.backward(total)
        sq = 0.0
        for name, p in model.params.items():
            if p.grad is not None and name.split(".", 1)[0] not in frozen:
                sq += float(np.sum(p.grad * p.grad))
        grad_norm = math.sqrt(sq)
        skipped = not math.isfinite(grad_norm)
    if skipped:
        logger.warning("phase %d step %d: non-finite loss or gradient, step skipped", phase, step)
    else:
        optimizer.step(model.params, frozen)
    model.zero_grad()
    return StepReport(
        phase=phase, step=step, total=bd.total, photometric=bd.photometric, smoothness=bd.smoothness,
        augmentation=bd.augmentation, regularization=bd.regularization, weighted=bd.weighted,
        mask_mean=bd.mask_mean, mask_metric=bd.mask_metric, grad_norm=grad_norm, second_pass=second,
        skipped=skipped, seconds=time.perf_counter() - start,
    )


def sample_batch(triplets, batch_size: int, rng: np.random.Generator) -> Batch:
    idx = rng.choice(len(triplets), size=min(batch_size, len(triplets)), replace=False)
    return Batch.from_triplets([triplets[i] for i in np.sort(idx)])


# ---------------------------------------------------------------- checkpoints
def _encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _decode_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def save_checkpoint(path, model: DepthPoseNet, optimizer: Adam | None, config: TrainConfig, phase: int, step: int,
                    resolution: tuple[int, int]) -> None:
    arrays = {f"param.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    arrays["meta.progress"] = np.array([phase, step, resolution[0], resolution[1]], dtype=np.float64)
    arrays["meta.config"] = _encode_text(json.dumps(config.to_dict(), sort_keys=True))
    ckpt.save(path, arrays)


@dataclass
class LoadedCheckpoint:
    model: DepthPoseNet
    config: TrainConfig
    phase: int
    step: int
    resolution: tuple
    arrays: dict = field(repr=False)


def load_checkpoint(path) -> LoadedCheckpoint:
    arrays = ckpt.load(path)
    if "meta.config" not in arrays or "meta.progress" not in arrays:
        raise ckpt.CheckpointError(f"{path}: missing training metadata")
    config = TrainConfig.from_dict(json.loads(_decode_text(arrays["meta.config"])))
    phase, step, h, w = (int(v) for v in arrays["meta.progress"])
    model = DepthPoseNet(config.model, seed=config.seed)
    model.load_state_dict({k[len("param.") :]: v for k, v in arrays.items() if k.startswith("param.")})
    return LoadedCheckpoint(model, config, phase, step, (h, w), arrays)


# ----------------------------------------------------------------- schedule
@dataclass
class TrainResult:
    model: DepthPoseNet
    final_checkpoint: Path
    reports: list
    seconds: float
    resolution: tuple
    pose_snapshot: dict = field(default_factory=dict, repr=False)


def _phase_data(triplets, phase: int, config: TrainConfig):
    if phase == 1:
        return triplets
    h, w = triplets[0].size
    m = config.phase2.resolution_multiplier
    return [S.rerender(t, w * m, h * m) for t in triplets]


def _trim_log(path: Path, phase: int, step: int) -> None:
    if not path.exists():
        return
    keep = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        if (rec["phase"], rec["step"]) <= (phase, step):
            keep.append(line)
    path.write_text("".join(x + "\n" for x in keep))


def progressive_train(config: TrainConfig, triplets, out_dir, resume=None, on_report=None,
                      max_steps: int | None = None) -> TrainResult:
    """Phase 1 at the data resolution, then phase 2 at the configured multiple with frozen groups.

    ``resume`` is a checkpoint path written by an earlier run of the same
    config.  ``max_steps`` stops after that many steps in total (used to
    simulate an interrupted run).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    sizes = {t.size for t in triplets}
    if len(sizes) != 1:
        raise ValueError(f"training triplets differ in size: {sorted(sizes)}")
    for t in triplets:
        if t.size[0] % 16 or t.size[1] % 16:
            raise ValueError(f"triplet size {t.size} is not divisible by 16")

    model = DepthPoseNet(config.model, seed=config.seed)
    optimizer = Adam(config.phase1.lr)
    phase, done = 1, 0
    if resume is not None:
        loaded = load_checkpoint(resume)
        if loaded.config.digest() != config.digest():
            raise ConfigError(f"checkpoint {resume} was written by a different config")
        model.load_state_dict(loaded.model.state_dict())
        phase, done = loaded.phase, loaded.step
        optimizer = Adam(config.phase1.lr if phase == 1 else config.phase2.lr)
        optimizer.load_state_arrays(loaded.arrays)
        _trim_log(log_path, phase, done)
    elif log_path.exists():
        log_path.unlink()

    reports: list[StepReport] = []
    pose_snapshot: dict = {}
    started = time.perf_counter()
    budget = max_steps
    final_path = out_dir / "final.dfck"
    resolution = triplets[0].size
    with log_path.open("a") as log:
        for ph in (1, 2):
            if ph < phase:
                continue
            pc = config.phase1 if ph == 1 else config.phase2
            frozen = () if ph == 1 else tuple(config.phase2.frozen_groups)
            data = _phase_data(triplets, ph, config)
            resolution = data[0].size
            start = done if ph == phase else 0
            if ph == 2 and phase == 1:
                if config.phase2.reset_adam:
                    optimizer = Adam(config.phase2.lr)
                else:
                    optimizer.lr = config.phase2.lr
            pose_snapshot = {k: v.data.copy() for k, v in model.group("pose").items()}
            for step in range(start + 1, pc.steps + 1):
                if budget is not None and budget <= 0:
                    return TrainResult(model, None, reports, time.perf_counter() - started, resolution, pose_snapshot)
                batch = sample_batch(data, pc.batch_size, step_rng(config.seed + 7919, ph, step))
                report = train_step(model, batch, optimizer, config, ph, step, frozen)
                reports.append(report)
                log.write(report.to_json() + "\n")
                log.flush()
                if on_report is not None:
                    on_report(report)
                if step % config.checkpoint_every == 0 or step == pc.steps:
                    save_checkpoint(out_dir / f"ckpt_p{ph}_s{step:06d}.dfck", model, optimizer, config, ph, step,
                                    resolution)
                if budget is not None:
                    budget -= 1
            phase, done = ph, pc.steps
            if ph == 1 and pc.steps == 0:
                save_checkpoint(out_dir / "ckpt_p1_s000000.dfck", model, optimizer, config, 1, 0, resolution)
    save_checkpoint(final_path, model, optimizer, config, 2, config.phase2.steps, resolution)
    return TrainResult(model, final_path, reports, time.perf_counter() - started, resolution, pose_snapshot)


def write_previews(model: DepthPoseNet, triplets, out_dir, count: int = 4) -> list[Path]:
    """False-colour disparity previews for the first ``count`` triplets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(triplets[:count]):
        with T.no_grad():
            disp = model.predict_disparity(t.t[None])[0].data[0, 0]
        path = out_dir / f"val_{i:02d}_disp.ppm"
        write_ppm(path, false_color(disp))
        write_ppm(out_dir / f"val_{i:02d}_image.ppm", t.t)
        paths.append(path)
    return paths
