"""Depth error metrics with median scaling, capping and pixel-pooled aggregation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")


@dataclass
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int
    scale: float = 1.0
    # raw sums, so reports pool by pixel count rather than by image
    sums: dict | None = None

    def __post_init__(self):
        if not self.delta1 <= self.delta2 <= self.delta3:
            raise ValueError("delta thresholds must be nested")

    def to_dict(self, with_sums: bool = False) -> dict:
        d = asdict(self)
        if not with_sums:
            d.pop("sums")
        return d

    def to_json(self, **meta) -> str:
        return json.dumps({"format_version": FORMAT_VERSION, **meta, "metrics": self.to_dict()}, indent=2)

    def table(self) -> str:
        head = " ".join(f"{c:>9}" for c in COLUMNS)
        vals = " ".join(f"{getattr(self, c):9.4f}" for c in COLUMNS)
        return f"{head}\n{vals}"


def median_scale(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Scale ``pred`` by median(gt) / median(pred) over valid pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = gt > 0 if valid is None else np.asarray(valid, dtype=bool) & (gt > 0)
    if not mask.any():
        raise ValueError("median scaling needs at least one valid pixel")
    med_pred = np.median(pred[mask])
    if med_pred == 0:
        raise ValueError("median of the prediction is zero")
    factor = float(np.median(gt[mask]) / med_pred)
    return pred * factor, factor


def _sums(pred: np.ndarray, gt: np.ndarray) -> dict:
    diff = pred - gt

    def within(k):
        # max(p/g, g/p) < t written with products, so p = t*g lands exactly on the boundary
        t = 1.25**k
        return float(np.sum((pred < t * gt) & (gt < t * pred)))

    return {
        "abs_rel": float(np.sum(np.abs(diff) / gt)),
        "sq_rel": float(np.sum(diff**2 / gt)),
        "sq": float(np.sum(diff**2)),
        "sq_log": float(np.sum((np.log(pred) - np.log(gt)) ** 2)),
        "delta1": within(1),
        "delta2": within(2),
        "delta3": within(3),
    }


def _from_sums(s: dict, n: int, scale: float) -> MetricReport:
    return MetricReport(
        abs_rel=s["abs_rel"] / n,
        sq_rel=s["sq_rel"] / n,
        rmse=float(np.sqrt(s["sq"] / n)),
        rmse_log=float(np.sqrt(s["sq_log"] / n)),
        delta1=s["delta1"] / n,
        delta2=s["delta2"] / n,
        delta3=s["delta3"] / n,
        n_pixels=n,
        scale=scale,
        sums=s,
    )


def compute_metrics(pred, gt, cap: float = 80.0, d_min_eval: float = 1e-3, valid=None,
                    median_scaling: bool = False) -> MetricReport:
    """The seven standard metrics; pixels with gt <= 0 (or outside ``valid``) are ignored.

    With ``median_scaling`` the prediction is rescaled before clamping.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    mask = gt > 0
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    if not mask.any():
        raise ValueError("no valid pixels to evaluate")
    scale = 1.0
    if median_scaling:
        pred, scale = median_scale(pred, gt, mask)
    p = np.clip(pred[mask], d_min_eval, cap)
    g = np.clip(gt[mask], d_min_eval, cap)
    return _from_sums(_sums(p, g), int(mask.sum()), scale)


def aggregate(reports) -> MetricReport:
    """Pool reports by pixel (sum numerators and counts, then divide)."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    if len(reports) == 1:
        return reports[0]
    keys = reports[0].sums.keys()
    total = {k: float(sum(r.sums[k] for r in reports)) for k in keys}
    n = sum(r.n_pixels for r in reports)
    scales = [r.scale for r in reports]
    return _from_sums(total, n, float(np.median(scales)))
