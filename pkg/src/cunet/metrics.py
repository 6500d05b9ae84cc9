"""Keypoint decoding and PCK-style evaluation.

Predictions are decoded from heatmaps by argmax (ties resolve to the first
cell in row-major order). A joint counts as correct when the Euclidean
distance to the ground truth is at most alpha times a per-sample reference
length: the head-neck segment for the head-normalized score, the
pelvis-thorax segment for the torso-normalized one. All distances live in
heatmap coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .synth import HEAD, NECK, PELVIS, THORAX, JOINTS

__all__ = ["EvalResult", "decode_keypoints", "reference_lengths", "pck"]

_REF_SEGMENTS = {"pckh": (HEAD, NECK), "pck": (PELVIS, THORAX)}


def decode_keypoints(heatmaps: np.ndarray) -> np.ndarray:
    """Argmax locations as (x, y) integer pairs, shape (..., K, 2).

    Accepts (K, H, W) or (N, K, H, W). Ties break toward the smallest flat
    index, i.e. topmost row then leftmost column.
    """
    if heatmaps.ndim not in (3, 4):
        raise ValueError(f"decode_keypoints: expected (K,H,W) or (N,K,H,W), "
                         f"got shape {heatmaps.shape}")
    h, w = heatmaps.shape[-2:]
    flat = heatmaps.reshape(*heatmaps.shape[:-2], h * w)
    idx = flat.argmax(axis=-1)
    xy = np.stack([idx % w, idx // w], axis=-1)
    return xy.astype(np.int64)


def reference_lengths(gt_xy: np.ndarray, kind: str) -> np.ndarray:
    """Per-sample normalization length from a ground-truth segment.

    gt_xy is (N, K, 2) in heatmap coordinates. kind selects the segment:
    "pckh" uses head-neck, "pck" uses pelvis-thorax.
    """
    if kind not in _REF_SEGMENTS:
        raise ValueError(f"reference_lengths: kind must be one of "
                         f"{sorted(_REF_SEGMENTS)}, got {kind!r}")
    a, b = _REF_SEGMENTS[kind]
    if gt_xy.ndim != 3 or gt_xy.shape[-1] != 2:
        raise ValueError(f"reference_lengths: expected (N,K,2), got shape {gt_xy.shape}")
    diff = gt_xy[:, a, :].astype(np.float64) - gt_xy[:, b, :].astype(np.float64)
    return np.hypot(diff[:, 0], diff[:, 1])


@dataclass
class EvalResult:
    alpha: float
    kind: str
    correct: np.ndarray  # (K,) int64 per-joint correct counts
    total: np.ndarray  # (K,) int64 per-joint visible counts
    excluded_samples: int = 0
    per_joint: dict[str, float] = field(init=False)

    def __post_init__(self):
        with np.errstate(invalid="ignore"):
            frac = np.where(self.total > 0, self.correct / np.maximum(self.total, 1), np.nan)
        self.per_joint = {name: float(frac[i]) for i, name in enumerate(JOINTS)}

    @property
    def overall(self) -> float:
        total = int(self.total.sum())
        if total == 0:
            return float("nan")
        return float(self.correct.sum() / total)

    def to_csv(self) -> str:
        lines = ["joint,correct,total,pck"]
        for i, name in enumerate(JOINTS):
            score = self.per_joint[name]
            text = "nan" if np.isnan(score) else f"{score:.6f}"
            lines.append(f"{name},{int(self.correct[i])},{int(self.total[i])},{text}")
        overall = self.overall
        text = "nan" if np.isnan(overall) else f"{overall:.6f}"
        lines.append(f"ALL,{int(self.correct.sum())},{int(self.total.sum())},{text}")
        return "\n".join(lines) + "\n"

    def __str__(self) -> str:
        return (f"{self.kind}@{self.alpha:g}: {self.overall:.4f} "
                f"({int(self.correct.sum())}/{int(self.total.sum())} joints, "
                f"{self.excluded_samples} samples excluded)")


def pck(pred_xy: np.ndarray, gt_xy: np.ndarray, visible: np.ndarray,
        alpha: float, kind: str = "pckh") -> EvalResult:
    """Score predicted keypoints against ground truth.

    pred_xy and gt_xy are (N, K, 2) in heatmap coordinates; visible is
    (N, K) bool. Only visible joints are scored. Samples whose reference
    segment has zero length (or an invisible endpoint) are excluded entirely
    and counted in `excluded_samples`.
    """
    pred_xy = np.asarray(pred_xy, dtype=np.float64)
    gt_xy = np.asarray(gt_xy, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    if pred_xy.shape != gt_xy.shape or pred_xy.ndim != 3 or pred_xy.shape[-1] != 2:
        raise ValueError(f"pck: pred {pred_xy.shape} and gt {gt_xy.shape} must both "
                         f"be (N,K,2)")
    if visible.shape != pred_xy.shape[:2]:
        raise ValueError(f"pck: visible shape {visible.shape} does not match "
                         f"(N,K)={pred_xy.shape[:2]}")
    if alpha <= 0:
        raise ValueError(f"pck: alpha must be positive, got {alpha}")

    a, b = _REF_SEGMENTS[kind] if kind in _REF_SEGMENTS else (None, None)
    if a is None:
        raise ValueError(f"pck: kind must be one of {sorted(_REF_SEGMENTS)}, got {kind!r}")
    refs = reference_lengths(gt_xy, kind)
    usable = (refs > 0) & visible[:, a] & visible[:, b]

    k = pred_xy.shape[1]
    correct = np.zeros(k, dtype=np.int64)
    total = np.zeros(k, dtype=np.int64)
    dist = np.linalg.norm(pred_xy - gt_xy, axis=-1)  # (N, K)
    for i in range(pred_xy.shape[0]):
        if not usable[i]:
            continue
        scored = visible[i]
        hits = scored & (dist[i] <= alpha * refs[i])
        total += scored.astype(np.int64)
        correct += hits.astype(np.int64)
    return EvalResult(alpha=alpha, kind=kind, correct=correct, total=total,
                      excluded_samples=int((~usable).sum()))
