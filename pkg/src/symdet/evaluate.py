"""Evaluation protocols for symmetry score maps.

Primary scheme: dilate with an exact 11x11 disk (radius 5, 81 offsets) and
compare pixel-wise — precision against the dilated ground truth, recall from
the ground truth against the dilated prediction, so evaluating the ground
truth against itself scores exactly 1.  The threshold sweep is computed in
closed form: ``dilate(score >= t) == (max_filter(score) >= t)``, and counts
over all thresholds come from sorted score values, which is exactly
equivalent to thresholding and dilating per threshold.

Legacy scheme: threshold, morphologically thin the prediction to a 1-pixel
skeleton (Zhang-Suen), then greedily one-to-one match prediction and ground
truth pixels within Euclidean distance 5 (nearest pairs first).

Both sweep 100 thresholds evenly spaced inside (0, 1) and report the best F1.
Dataset-level scores aggregate the pixel counts over all images per threshold
before forming precision/recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DISK_RADIUS = 5


def default_thresholds() -> np.ndarray:
    return (np.arange(100) + 0.5) / 100.0


def disk_structure(radius: int = DISK_RADIUS) -> np.ndarray:
    """Integer disk: offsets with dx^2 + dy^2 <= radius^2 (81 for radius 5)."""
    extent = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(extent, extent, indexing="ij")
    return dx * dx + dy * dy <= radius * radius


def dilate_disk(mask: np.ndarray, radius: int = DISK_RADIUS) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk_structure(radius))


@dataclass
class EvalReport:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    best_index: int = field(init=False)
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        self.best_index = int(np.argmax(self.f1))

    @property
    def best_f1(self) -> float:
        return float(self.f1[self.best_index])

    @property
    def best_threshold(self) -> float:
        return float(self.thresholds[self.best_index])

    def lines(self, prefix: str = "") -> list[str]:
        p = f"{prefix}." if prefix else ""
        return [
            f"{p}best_f1 = {self.best_f1!r}",
            f"{p}best_threshold = {self.best_threshold!r}",
            f"{p}precision = {float(self.precision[self.best_index])!r}",
            f"{p}recall = {float(self.recall[self.best_index])!r}",
            f"{p}tp = {self.tp}",
            f"{p}fp = {self.fp}",
            f"{p}fn = {self.fn}",
        ]


def _count_ge(values: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Number of entries >= t for every threshold t."""
    v = np.sort(values.ravel())
    return v.size - np.searchsorted(v, ts, side="left")


@dataclass
class DilationCounts:
    """Per-threshold pixel counts of the dilation protocol for one image."""

    tp_pred: np.ndarray  # predicted pixels hitting the dilated ground truth
    n_pred: np.ndarray
    matched_gt: np.ndarray  # ground-truth pixels hit by the dilated prediction
    n_gt: int

    def __add__(self, other: "DilationCounts") -> "DilationCounts":
        return DilationCounts(
            self.tp_pred + other.tp_pred,
            self.n_pred + other.n_pred,
            self.matched_gt + other.matched_gt,
            self.n_gt + other.n_gt,
        )


def dilation_counts(
    score: np.ndarray, gt: np.ndarray, ts: np.ndarray, radius: int = DISK_RADIUS
) -> DilationCounts:
    score = np.asarray(score, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if score.shape != gt.shape:
        raise ValueError(f"shape mismatch: score {score.shape} vs gt {gt.shape}")
    gt_dil = dilate_disk(gt, radius)
    # dilate(score >= t) == max_filter(score) >= t, for every t at once
    score_dil = ndimage.maximum_filter(
        score, footprint=disk_structure(radius), mode="constant", cval=0.0
    )
    return DilationCounts(
        tp_pred=_count_ge(score[gt_dil], ts),
        n_pred=_count_ge(score, ts),
        matched_gt=_count_ge(score_dil[gt], ts),
        n_gt=int(gt.sum()),
    )


def _f1_curve(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    s = p + r
    return np.where(s > 0, 2 * p * r / np.where(s > 0, s, 1.0), 0.0)


def _report_from_dilation(counts: DilationCounts, ts: np.ndarray) -> EvalReport:
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(
            counts.n_pred > 0,
            counts.tp_pred / np.maximum(counts.n_pred, 1),
            1.0 if counts.n_gt == 0 else 0.0,
        )
        recall = (
            counts.matched_gt / counts.n_gt if counts.n_gt > 0 else np.ones_like(ts)
        )
    report = EvalReport(ts, precision, recall, _f1_curve(precision, recall))
    i = report.best_index
    report.tp = int(counts.tp_pred[i])
    report.fp = int(counts.n_pred[i] - counts.tp_pred[i])
    report.fn = int(counts.n_gt - counts.matched_gt[i])
    return report


def f1_dilation(
    score: np.ndarray,
    gt: np.ndarray,
    thresholds: np.ndarray | None = None,
    radius: int = DISK_RADIUS,
) -> EvalReport:
    ts = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    return _report_from_dilation(dilation_counts(score, gt, ts, radius), ts)


def f1_dilation_dataset(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    thresholds: np.ndarray | None = None,
    radius: int = DISK_RADIUS,
) -> EvalReport:
    """Aggregate pixel counts over all (score, gt) pairs, then sweep."""
    ts = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    total = None
    for score, gt in pairs:
        c = dilation_counts(score, gt, ts, radius)
        total = c if total is None else total + c
    if total is None:
        raise ValueError("no images to evaluate")
    return _report_from_dilation(total, ts)


# -- legacy protocol ---------------------------------------------------------


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen iterative thinning to a 1-pixel-wide skeleton."""
    img = np.asarray(mask, dtype=bool).copy()
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            p = np.pad(img, 1)
            P2 = p[:-2, 1:-1]
            P3 = p[:-2, 2:]
            P4 = p[1:-1, 2:]
            P5 = p[2:, 2:]
            P6 = p[2:, 1:-1]
            P7 = p[2:, :-2]
            P8 = p[1:-1, :-2]
            P9 = p[:-2, :-2]
            ring = [P2, P3, P4, P5, P6, P7, P8, P9]
            b = sum(n.astype(np.int8) for n in ring)
            a = sum(((~ring[i]) & ring[(i + 1) % 8]).astype(np.int8) for i in range(8))
            if step == 0:
                c1 = ~(P2 & P4 & P6)
                c2 = ~(P4 & P6 & P8)
            else:
                c1 = ~(P2 & P4 & P8)
                c2 = ~(P2 & P6 & P8)
            delete = img & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
            if delete.any():
                img &= ~delete
                changed = True
    return img


def greedy_match(pred_pts: np.ndarray, gt_pts: np.ndarray, max_dist: float = 5.0) -> int:
    """One-to-one nearest-first matching; returns the number of matched pairs."""
    if len(pred_pts) == 0 or len(gt_pts) == 0:
        return 0
    from scipy.spatial import cKDTree

    tree = cKDTree(gt_pts)
    pairs = []
    for pi, pt in enumerate(pred_pts):
        for gi in tree.query_ball_point(pt, max_dist + 1e-9):
            d = float(np.hypot(*(pt - gt_pts[gi])))
            pairs.append((d, pi, gi))
    pairs.sort()
    used_p = np.zeros(len(pred_pts), dtype=bool)
    used_g = np.zeros(len(gt_pts), dtype=bool)
    matches = 0
    for _, pi, gi in pairs:
        if not used_p[pi] and not used_g[gi]:
            used_p[pi] = used_g[gi] = True
            matches += 1
    return matches


@dataclass
class LegacyCounts:
    tp: np.ndarray
    n_pred: np.ndarray
    n_gt: int

    def __add__(self, other: "LegacyCounts") -> "LegacyCounts":
        return LegacyCounts(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gt + other.n_gt)


def legacy_counts(
    score: np.ndarray, gt: np.ndarray, ts: np.ndarray, max_dist: float = 5.0
) -> LegacyCounts:
    score = np.asarray(score, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if score.shape != gt.shape:
        raise ValueError(f"shape mismatch: score {score.shape} vs gt {gt.shape}")
    gt_pts = np.argwhere(gt).astype(np.float64)
    tp = np.zeros(len(ts), dtype=np.int64)
    n_pred = np.zeros(len(ts), dtype=np.int64)
    for i, t in enumerate(ts):
        pred_pts = np.argwhere(thin(score >= t)).astype(np.float64)
        n_pred[i] = len(pred_pts)
        tp[i] = greedy_match(pred_pts, gt_pts, max_dist)
    return LegacyCounts(tp, n_pred, len(gt_pts))


def _report_from_legacy(counts: LegacyCounts, ts: np.ndarray) -> EvalReport:
    precision = np.where(
        counts.n_pred > 0,
        counts.tp / np.maximum(counts.n_pred, 1),
        1.0 if counts.n_gt == 0 else 0.0,
    )
    recall = counts.tp / counts.n_gt if counts.n_gt > 0 else np.ones_like(ts)
    report = EvalReport(ts, precision, recall, _f1_curve(precision, recall))
    i = report.best_index
    report.tp = int(counts.tp[i])
    report.fp = int(counts.n_pred[i] - counts.tp[i])
    report.fn = int(counts.n_gt - counts.tp[i])
    return report


def f1_legacy(
    score: np.ndarray,
    gt: np.ndarray,
    thresholds: np.ndarray | None = None,
    max_dist: float = 5.0,
) -> EvalReport:
    ts = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    return _report_from_legacy(legacy_counts(score, gt, ts, max_dist), ts)


def f1_legacy_dataset(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    thresholds: np.ndarray | None = None,
    max_dist: float = 5.0,
) -> EvalReport:
    ts = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    total = None
    for score, gt in pairs:
        c = legacy_counts(score, gt, ts, max_dist)
        total = c if total is None else total + c
    if total is None:
        raise ValueError("no images to evaluate")
    return _report_from_legacy(total, ts)


def scheme_rank_consistency(pairs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Spearman rank correlation between the two schemes' best-F1 rankings.

    Reported for reference; dense circle masks are a known divergence point
    between the protocols.
    """
    from scipy import stats

    if len(pairs) < 2:
        return 1.0
    dil = [f1_dilation(s, g).best_f1 for s, g in pairs]
    leg = [f1_legacy(s, g).best_f1 for s, g in pairs]
    rho = stats.spearmanr(dil, leg).statistic
    return float(rho)
