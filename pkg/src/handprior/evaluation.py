"""Procrustes-aligned joint-error metric and clarity-stratified reporting.

Errors are computed per frame over the 42 hand joints: predicted joint
positions are rigidly aligned to the ground truth (similarity Procrustes:
scale, rotation, translation), the mean Euclidean residual is taken over the
joints, and the result is scaled to millimeters using a 30 cm reference
shoulder distance against the measured ground-truth shoulder distance.

Reports follow a fixed stratum layout (unclear / clear / all frames): the
mean is pooled over all frames in a stratum and the +/- value is the standard
deviation of per-sequence means (population std, deterministic sequence
order).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import PoseSequence
from .kinematics import (
    HAND_JOINTS,
    KinematicTree,
    forward_kinematics,
    hand_positions,
    measure_shoulder_distance,
)

SHOULDER_REF = 0.30
STRATA = ("unclear", "clear", "all")

_DEGENERACY_TOL = 1e-9


def procrustes_align(x: np.ndarray, y: np.ndarray):
    """Best similarity transform of x onto y: minimizes ||s*x@R + t - y||_F.

    x, y: (J, 3) with J >= 3 and x not (near-)collinear. R is a proper
    rotation; a reflection-only fit is forbidden via sign correction on the
    smallest singular value. Returns (s, R, t, x_aligned).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or x.shape != y.shape:
        raise ValueError(f"point sets must share a (J, 3) shape, got {x.shape} and {y.shape}")
    if x.shape[0] < 3:
        raise ValueError(f"need at least 3 points, got {x.shape[0]}")

    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y

    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] / sv[0] < _DEGENERACY_TOL:
        raise ValueError(
            "degenerate point set: points are (near-)collinear "
            f"(singular values {sv[0]:.3e}, {sv[1]:.3e}, {sv[2]:.3e})"
        )

    m = xc.T @ yc
    u, s, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    corr = np.array([1.0, 1.0, d])
    r = (u * corr) @ vt
    scale = float((s * corr).sum() / (xc * xc).sum())
    t = mu_y - scale * mu_x @ r
    return scale, r, t, scale * x @ r + t


def joint_error_mm(
    pred_pos: np.ndarray,
    gt_pos: np.ndarray,
    gt_shoulder_dist: float,
    shoulder_ref: float = SHOULDER_REF,
) -> np.ndarray:
    """Per-frame aligned hand-joint error in mm.

    pred_pos, gt_pos: (T, 42, 3) hand-joint positions from forward kinematics.
    Each frame is Procrustes-aligned independently; the mean joint residual is
    scaled by (shoulder_ref / gt_shoulder_dist) * 1000.
    """
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    gt_pos = np.asarray(gt_pos, dtype=np.float64)
    if pred_pos.shape != gt_pos.shape:
        raise ValueError(f"shape mismatch: {pred_pos.shape} vs {gt_pos.shape}")
    if pred_pos.ndim != 3 or pred_pos.shape[1] != HAND_JOINTS or pred_pos.shape[2] != 3:
        raise ValueError(f"positions must be (T, {HAND_JOINTS}, 3), got {pred_pos.shape}")
    if gt_shoulder_dist <= 0.0:
        raise ValueError(f"shoulder distance must be positive, got {gt_shoulder_dist}")

    scale_mm = shoulder_ref / gt_shoulder_dist * 1000.0
    errors = np.empty(pred_pos.shape[0])
    for f in range(pred_pos.shape[0]):
        _, _, _, aligned = procrustes_align(pred_pos[f], gt_pos[f])
        errors[f] = np.linalg.norm(aligned - gt_pos[f], axis=-1).mean() * scale_mm
    return errors


@dataclass
class EvalRow:
    method: str
    stratum: str
    mean_mm: float | None
    std_mm: float | None
    frames: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def row(self, method: str, stratum: str) -> EvalRow:
        for r in self.rows:
            if r.method == method and r.stratum == stratum:
                return r
        raise KeyError(f"no row for method={method!r} stratum={stratum!r}")

    def format(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.6f}"

        lines = ["# method stratum mean_mm std_mm frames"]
        for r in self.rows:
            lines.append(f"{r.method} {r.stratum} {fmt(r.mean_mm)} {fmt(r.std_mm)} {r.frames}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.format())


def _stratum_stats(per_seq_errors: list[np.ndarray]):
    """(pooled mean, std of per-sequence means, frame count) over a stratum."""
    frames = int(sum(e.size for e in per_seq_errors))
    if frames == 0:
        return None, None, 0
    pooled = float(np.concatenate([e for e in per_seq_errors if e.size]).mean())
    seq_means = np.array([e.mean() for e in per_seq_errors if e.size])
    return pooled, float(seq_means.std()), frames


def evaluate(
    methods: dict[str, dict[str, np.ndarray]],
    gt_sequences: list[PoseSequence],
    tree: KinematicTree,
) -> EvalReport:
    """Score prediction sets against ground truth, stratified by frame clarity.

    methods maps a method name to {sequence id: predicted hands (T, 126)}.
    Every method must cover every ground-truth sequence with a matching frame
    count. If any sequence lacks clarity labels only the 'all' stratum is
    reported (with a warning).
    """
    gt_sorted = sorted(gt_sequences, key=lambda s: s.id)
    if not gt_sorted:
        raise ValueError("no ground-truth sequences")
    have_clarity = all(s.clarity is not None for s in gt_sorted)
    if not have_clarity:
        warnings.warn(
            "one or more sequences lack clarity labels; reporting 'all frames' only",
            stacklevel=2,
        )

    gt_hand_pos = {}
    shoulder = {}
    for seq in gt_sorted:
        pos = forward_kinematics(tree, seq.body, seq.hands)
        gt_hand_pos[seq.id] = hand_positions(pos)
        shoulder[seq.id] = measure_shoulder_distance(tree, pos)

    report = EvalReport()
    for method, preds in methods.items():
        per_seq = {stratum: [] for stratum in STRATA}
        for seq in gt_sorted:
            if seq.id not in preds:
                raise ValueError(f"method {method!r} has no prediction for sequence {seq.id!r}")
            pred_hands = np.asarray(preds[seq.id], dtype=np.float64)
            if pred_hands.shape != seq.hands.shape:
                raise ValueError(
                    f"method {method!r}, sequence {seq.id!r}: prediction has "
                    f"{pred_hands.shape[0]} frames, ground truth has {seq.num_frames}"
                )
            pred_pos = hand_positions(forward_kinematics(tree, seq.body, pred_hands))
            errors = joint_error_mm(pred_pos, gt_hand_pos[seq.id], shoulder[seq.id])
            per_seq["all"].append(errors)
            if have_clarity:
                per_seq["unclear"].append(errors[seq.clarity == 0])
                per_seq["clear"].append(errors[seq.clarity == 1])
        strata = STRATA if have_clarity else ("all",)
        for stratum in strata:
            mean, std, frames = _stratum_stats(per_seq[stratum])
            report.rows.append(EvalRow(method, stratum, mean, std, frames))
    return report


def nearest_hand_retrieval(
    query_hand: np.ndarray,
    hands: np.ndarray,
    bodies: np.ndarray,
    k: int = 10,
):
    """The k frames whose hand pose is closest to the query, with their body poses.

    Returns (hands (k, 126), bodies (k, 18), distances (k,)) sorted by
    ascending Euclidean distance in hand-angle space (stable order on ties).
    Asks for more frames than available -> returns all of them with a warning.
    """
    query_hand = np.asarray(query_hand, dtype=np.float64).ravel()
    hands = np.asarray(hands, dtype=np.float64)
    bodies = np.asarray(bodies, dtype=np.float64)
    if hands.ndim != 2 or hands.shape[1] != query_hand.size:
        raise ValueError(f"hands must be (N, {query_hand.size}), got {hands.shape}")
    if bodies.shape[0] != hands.shape[0]:
        raise ValueError(f"{hands.shape[0]} hand frames but {bodies.shape[0]} body frames")
    n = hands.shape[0]
    if n < 1:
        raise ValueError("need at least one frame")
    if k > n:
        warnings.warn(f"requested k={k} nearest frames but only {n} available", stacklevel=2)
        k = n
    dist = np.linalg.norm(hands - query_hand, axis=1)
    order = np.argsort(dist, kind="stable")[:k]
    return hands[order], bodies[order], dist[order]
