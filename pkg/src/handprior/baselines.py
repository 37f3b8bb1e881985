"""Non-learned comparison methods: segment nearest-neighbor transfer and median pose.

The NN baseline breaks a query body sequence into consecutive non-overlapping
sub-segments of length L, finds each one's nearest training body sub-segment
(Euclidean distance over the flattened raw angle values), and transfers the
matching hand sub-segment. The median baseline predicts a single per-dimension
median hand pose for every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PoseSequence, WindowedSample, save_sequence, load_sequence
from .kinematics import BODY_DIM, HAND_DIM

SEGMENT_LEN = 8


@dataclass
class SegmentDB:
    """Paired (body, hand) sub-segments of a common length harvested from training windows."""

    segment_len: int
    body: np.ndarray   # (N, L, 18)
    hands: np.ndarray  # (N, L, 126)

    def __post_init__(self):
        if self.body.ndim != 3 or self.hands.ndim != 3:
            raise ValueError("segment arrays must be (N, L, dim)")
        if self.body.shape[:2] != self.hands.shape[:2]:
            raise ValueError(
                f"body segments {self.body.shape[:2]} and hand segments {self.hands.shape[:2]} disagree"
            )
        if self.body.shape[1] != self.segment_len:
            raise ValueError(f"segments have length {self.body.shape[1]}, expected {self.segment_len}")

    @property
    def size(self) -> int:
        return self.body.shape[0]


def build_segment_db(windows: list[WindowedSample], segment_len: int = SEGMENT_LEN) -> SegmentDB:
    """Chop training windows into consecutive non-overlapping segments of `segment_len`."""
    if segment_len < 1:
        raise ValueError(f"segment_len must be >= 1, got {segment_len}")
    bodies, hands = [], []
    for w in windows:
        n_seg = w.size // segment_len
        for s in range(n_seg):
            sl = slice(s * segment_len, (s + 1) * segment_len)
            bodies.append(w.body[sl])
            hands.append(w.hands[sl])
    if not bodies:
        raise ValueError("no segments could be harvested (windows shorter than segment_len?)")
    return SegmentDB(segment_len, np.stack(bodies), np.stack(hands))


def nn_predict(body: np.ndarray, db: SegmentDB) -> np.ndarray:
    """Nearest-neighbor hand transfer for a body sequence (T, 18) -> (T, 126).

    T that is not a multiple of the segment length is reflect-padded and the
    output trimmed. Ties break toward the lowest database index.
    """
    if db.size == 0:
        raise ValueError("empty segment database")
    body = np.asarray(body, dtype=np.float64)
    if body.ndim != 2 or body.shape[1] != BODY_DIM:
        raise ValueError(f"body must be (T, {BODY_DIM}), got {body.shape}")
    t = body.shape[0]
    L = db.segment_len
    if t % L != 0:
        pad = L - t % L
        mode = "reflect" if t > 1 else "edge"
        return nn_predict(np.pad(body, ((0, pad), (0, 0)), mode=mode), db)[:t]

    flat_db = db.body.reshape(db.size, -1)
    out = np.empty((t, HAND_DIM))
    for s in range(t // L):
        q = body[s * L : (s + 1) * L].ravel()
        d2 = np.sum((flat_db - q) ** 2, axis=1)
        best = int(np.argmin(d2))  # argmin returns the first (lowest-index) minimum
        out[s * L : (s + 1) * L] = db.hands[best]
    return out


def median_pose(frames: np.ndarray) -> np.ndarray:
    """Per-dimension lower median of hand frames (N, 126) -> (126,).

    The lower median (the ceil(N/2)-th smallest order statistic) keeps every
    output dimension an actually observed value.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"need at least one (N, dim) frame, got {frames.shape}")
    k = (frames.shape[0] + 1) // 2 - 1
    return np.sort(frames, axis=0)[k]


def median_predict(frames: np.ndarray, t: int) -> np.ndarray:
    """Median pose tiled to (t, 126)."""
    return np.tile(median_pose(frames), (t, 1))


def save_segment_db(db: SegmentDB, path) -> None:
    """Persist in the pose-file container; the id field carries the segment length."""
    seq = PoseSequence(
        id=f"segdb_L{db.segment_len}",
        fps=0.0,
        body=db.body.reshape(-1, BODY_DIM),
        hands=db.hands.reshape(-1, HAND_DIM),
    )
    save_sequence(seq, path)


def load_segment_db(path) -> SegmentDB:
    seq = load_sequence(path)
    if not seq.id.startswith("segdb_L"):
        raise ValueError(f"{path}: not a segment database (id {seq.id!r})")
    try:
        L = int(seq.id[len("segdb_L"):])
    except ValueError:
        raise ValueError(f"{path}: malformed segment length in id {seq.id!r}") from None
    if seq.num_frames % L != 0:
        raise ValueError(f"{path}: {seq.num_frames} frames not divisible by segment length {L}")
    n = seq.num_frames // L
    return SegmentDB(L, seq.body.reshape(n, L, BODY_DIM), seq.hands.reshape(n, L, HAND_DIM))
