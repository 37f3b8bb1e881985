"""Pose-sequence I/O, windowing, train/val splitting, normalization, synthetic data.

Pose file format (ASCII, whitespace-delimited, '#' comments allowed anywhere):
    header line:  id fps T F has_clarity
    T lines of 18 body angle values
    T lines of 126 hand angle values
    T lines of F image-feature values   (only if F > 0)
    T clarity flags, one per line       (only if has_clarity = 1; 1=clear, 0=unclear)

All angles are axis-angle triplets; sequences are stored and kept in
canonical form (per-joint magnitude <= pi).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import BODY_DIM, HAND_DIM, canonicalize

STD_FLOOR = 1e-6
WINDOW_SIZE = 64
WINDOW_OVERLAP = 32

# Fixed seeds for the synthetic body->hand map; constant so the same mapping
# underlies every generated dataset (train and held-out alike).
_MAP_SEED = 71520
_HAND_CONTEXT = 4  # hands at frame t depend on body frames t-k..t+k


class EmptySequenceError(ValueError):
    """A pose file with zero frames."""


@dataclass
class PoseSequence:
    """A time-aligned body (T, 18) and hand (T, 126) angle sequence.

    Optional per-frame image features (T, F) and clarity flags (T,) with
    1 = clear view of the hands, 0 = unclear. Angles are canonicalized on
    construction.
    """

    id: str
    fps: float
    body: np.ndarray
    hands: np.ndarray
    image_feats: np.ndarray | None = None
    clarity: np.ndarray | None = None

    def __post_init__(self):
        self.body = np.asarray(self.body, dtype=np.float64)
        self.hands = np.asarray(self.hands, dtype=np.float64)
        if self.body.ndim != 2 or self.body.shape[1] != BODY_DIM:
            raise ValueError(f"body must be (T, {BODY_DIM}), got {self.body.shape}")
        if self.hands.ndim != 2 or self.hands.shape[1] != HAND_DIM:
            raise ValueError(f"hands must be (T, {HAND_DIM}), got {self.hands.shape}")
        if self.body.shape[0] != self.hands.shape[0]:
            raise ValueError(
                f"body and hands must share T: body has {self.body.shape[0]} frames, "
                f"hands has {self.hands.shape[0]}"
            )
        t = self.body.shape[0]
        self.body = canonicalize(self.body.reshape(t, -1, 3)).reshape(t, BODY_DIM)
        self.hands = canonicalize(self.hands.reshape(t, -1, 3)).reshape(t, HAND_DIM)
        if self.image_feats is not None:
            self.image_feats = np.asarray(self.image_feats, dtype=np.float64)
            if self.image_feats.ndim != 2 or self.image_feats.shape[0] != t:
                raise ValueError(f"image_feats must be (T={t}, F), got {self.image_feats.shape}")
        if self.clarity is not None:
            self.clarity = np.asarray(self.clarity, dtype=np.int64)
            if self.clarity.shape != (t,):
                raise ValueError(f"clarity must be (T={t},), got {self.clarity.shape}")
            if not np.all((self.clarity == 0) | (self.clarity == 1)):
                raise ValueError("clarity flags must be 0 (unclear) or 1 (clear)")

    @property
    def num_frames(self) -> int:
        return self.body.shape[0]

    @property
    def feat_dim(self) -> int:
        return 0 if self.image_feats is None else self.image_feats.shape[1]


@dataclass
class WindowedSample:
    """A fixed-length training window cut from a source sequence."""

    source_id: str
    start: int
    body: np.ndarray                       # (size, 18)
    hands: np.ndarray                      # (size, 126)
    image_feats: np.ndarray | None = None  # (size, F)

    @property
    def size(self) -> int:
        return self.body.shape[0]


def _parse_floats(tokens, path, lineno, expected):
    if len(tokens) != expected:
        raise ValueError(f"{path}:{lineno}: expected {expected} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ValueError(f"{path}:{lineno}: malformed numeric value") from None


def load_sequence(path) -> PoseSequence:
    """Load a pose file. Raises ValueError with the offending line on bad input."""
    path = Path(path)
    rows = []  # (lineno, tokens)
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            rows.append((lineno, line.split()))
    if not rows:
        raise ValueError(f"{path}: empty file")

    hdr_line, hdr = rows[0]
    if len(hdr) != 5:
        raise ValueError(f"{path}:{hdr_line}: header must be 'id fps T F has_clarity', got {len(hdr)} fields")
    seq_id = hdr[0]
    try:
        fps = float(hdr[1])
        t = int(hdr[2])
        feat_dim = int(hdr[3])
        has_clarity = int(hdr[4])
    except ValueError:
        raise ValueError(f"{path}:{hdr_line}: malformed header") from None
    if t == 0:
        raise EmptySequenceError(f"{path}: sequence has 0 frames")
    if t < 0 or feat_dim < 0 or has_clarity not in (0, 1):
        raise ValueError(f"{path}:{hdr_line}: invalid header values T={t} F={feat_dim} has_clarity={has_clarity}")

    data_rows = rows[1:]
    expected_rows = 2 * t + (t if feat_dim > 0 else 0) + (t if has_clarity else 0)
    if len(data_rows) != expected_rows:
        # diagnose block sizes by field width so the error names both counts
        n_body = sum(1 for _, tok in data_rows if len(tok) == BODY_DIM)
        n_hand = sum(1 for _, tok in data_rows if len(tok) == HAND_DIM)
        raise ValueError(
            f"{path}: header declares T={t} but found {len(data_rows)} data rows "
            f"(expected {expected_rows}; body rows: {n_body}, hand rows: {n_hand})"
        )

    cursor = 0

    def take_block(width, count):
        nonlocal cursor
        block = np.empty((count, width), dtype=np.float64)
        for i in range(count):
            lineno, tokens = data_rows[cursor]
            block[i] = _parse_floats(tokens, path, lineno, width)
            cursor += 1
        return block

    body = take_block(BODY_DIM, t)
    hands = take_block(HAND_DIM, t)
    feats = take_block(feat_dim, t) if feat_dim > 0 else None
    clarity = None
    if has_clarity:
        flags = take_block(1, t)[:, 0]
        clarity = flags.astype(np.int64)
        if not np.all((flags == 0) | (flags == 1)):
            raise ValueError(f"{path}: clarity flags must be 0 or 1")
    return PoseSequence(seq_id, fps, body, hands, feats, clarity)


def save_sequence(seq: PoseSequence, path) -> None:
    """Write a pose file; values round-trip through load_sequence to 1e-9."""
    path = Path(path)
    feat_dim = seq.feat_dim
    has_clarity = 1 if seq.clarity is not None else 0
    with open(path, "w") as f:
        f.write(f"{seq.id} {seq.fps:.17g} {seq.num_frames} {feat_dim} {has_clarity}\n")
        for block in (seq.body, seq.hands):
            for row in block:
                f.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        if feat_dim > 0:
            for row in seq.image_feats:
                f.write(" ".join(f"{x:.17g}" for x in row) + "\n")
        if has_clarity:
            for flag in seq.clarity:
                f.write(f"{int(flag)}\n")


def make_windows(seq: PoseSequence, size: int = WINDOW_SIZE, overlap: int = WINDOW_OVERLAP) -> list[WindowedSample]:
    """Cut a sequence into complete sliding windows (stride = size - overlap).

    Sequences shorter than `size` yield no windows.
    """
    if not size > overlap >= 0:
        raise ValueError(f"need size > overlap >= 0, got size={size} overlap={overlap}")
    stride = size - overlap
    out = []
    for start in range(0, seq.num_frames - size + 1, stride):
        feats = None if seq.image_feats is None else seq.image_feats[start : start + size].copy()
        out.append(
            WindowedSample(
                source_id=seq.id,
                start=start,
                body=seq.body[start : start + size].copy(),
                hands=seq.hands[start : start + size].copy(),
                image_feats=feats,
            )
        )
    return out


def split_train_val(windows: list[WindowedSample], ratio: float = 0.7, seed: int = 0):
    """Split windows into (train, val) by source sequence id.

    Splitting at the sequence level keeps overlapping windows from leaking
    across the split. Deterministic given the seed. With a single source
    sequence everything goes to train and a warning is emitted.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    ids = sorted({w.source_id for w in windows})
    if not ids:
        return [], []
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(round(ratio * len(ids)))
    n_train = min(max(n_train, 1), len(ids))
    train_ids = set(order[:n_train])
    train = [w for w in windows if w.source_id in train_ids]
    val = [w for w in windows if w.source_id not in train_ids]
    if not val:
        warnings.warn(
            f"validation split is empty ({len(ids)} source sequence(s) at ratio {ratio}); "
            "all windows assigned to train",
            stacklevel=2,
        )
    return train, val


@dataclass
class NormalizationStats:
    """Per-dimension mean/std for body, hands, and (optionally) image features.

    Standard deviations are floored at 1e-6 so constant dimensions stay
    invertible. Fitting must see every training window exactly once.
    """

    body_mean: np.ndarray
    body_std: np.ndarray
    hand_mean: np.ndarray
    hand_std: np.ndarray
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None

    def apply_body(self, x):
        return (np.asarray(x, dtype=np.float64) - self.body_mean) / self.body_std

    def invert_body(self, x):
        return np.asarray(x, dtype=np.float64) * self.body_std + self.body_mean

    def apply_hands(self, x):
        return (np.asarray(x, dtype=np.float64) - self.hand_mean) / self.hand_std

    def invert_hands(self, x):
        return np.asarray(x, dtype=np.float64) * self.hand_std + self.hand_mean

    def apply_feats(self, x):
        if self.feat_mean is None:
            raise ValueError("stats were fit without image features")
        return (np.asarray(x, dtype=np.float64) - self.feat_mean) / self.feat_std

    def invert_feats(self, x):
        if self.feat_mean is None:
            raise ValueError("stats were fit without image features")
        return np.asarray(x, dtype=np.float64) * self.feat_std + self.feat_mean

    def to_dict(self) -> dict:
        d = {
            "body_mean": self.body_mean,
            "body_std": self.body_std,
            "hand_mean": self.hand_mean,
            "hand_std": self.hand_std,
        }
        if self.feat_mean is not None:
            d["feat_mean"] = self.feat_mean
            d["feat_std"] = self.feat_std
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            body_mean=np.asarray(d["body_mean"], dtype=np.float64),
            body_std=np.asarray(d["body_std"], dtype=np.float64),
            hand_mean=np.asarray(d["hand_mean"], dtype=np.float64),
            hand_std=np.asarray(d["hand_std"], dtype=np.float64),
            feat_mean=None if "feat_mean" not in d else np.asarray(d["feat_mean"], dtype=np.float64),
            feat_std=None if "feat_std" not in d else np.asarray(d["feat_std"], dtype=np.float64),
        )

    @classmethod
    def identity(cls, feat_dim: int = 0) -> "NormalizationStats":
        return cls(
            body_mean=np.zeros(BODY_DIM),
            body_std=np.ones(BODY_DIM),
            hand_mean=np.zeros(HAND_DIM),
            hand_std=np.ones(HAND_DIM),
            feat_mean=np.zeros(feat_dim) if feat_dim else None,
            feat_std=np.ones(feat_dim) if feat_dim else None,
        )


def fit_normalization(windows: list[WindowedSample]) -> NormalizationStats:
    """Per-dimension mean/std over all frames of all training windows."""
    if not windows:
        raise ValueError("need at least one window to fit normalization")
    body = np.concatenate([w.body for w in windows], axis=0)
    hands = np.concatenate([w.hands for w in windows], axis=0)
    stats = NormalizationStats(
        body_mean=body.mean(axis=0),
        body_std=np.maximum(body.std(axis=0), STD_FLOOR),
        hand_mean=hands.mean(axis=0),
        hand_std=np.maximum(hands.std(axis=0), STD_FLOOR),
    )
    if windows[0].image_feats is not None:
        feats = np.concatenate([w.image_feats for w in windows], axis=0)
        stats.feat_mean = feats.mean(axis=0)
        stats.feat_std = np.maximum(feats.std(axis=0), STD_FLOOR)
    return stats


def _hand_map_weights(feat_dim: int):
    """Fixed random weights of the synthetic body->hand (and hand->feature) map."""
    rng = np.random.default_rng(_MAP_SEED)
    in_dim = BODY_DIM * (2 * _HAND_CONTEXT + 1)
    hidden = 32
    w1 = rng.normal(0.0, 2.0 / np.sqrt(in_dim), size=(hidden, in_dim))
    b1 = rng.normal(0.0, 0.3, size=hidden)
    w2 = rng.normal(0.0, 2.0 / np.sqrt(hidden), size=(HAND_DIM, hidden))
    b2 = rng.normal(0.0, 0.3, size=HAND_DIM)
    wf = rng.normal(0.0, 1.0 / np.sqrt(HAND_DIM), size=(feat_dim, HAND_DIM)) if feat_dim else None
    return w1, b1, w2, b2, wf


def _hands_from_body(body: np.ndarray) -> np.ndarray:
    """Deterministic smooth nonlinear map from a local body window to hand angles."""
    k = _HAND_CONTEXT
    w1, b1, w2, b2, _ = _hand_map_weights(0)
    padded = np.pad(body, ((k, k), (0, 0)), mode="reflect")
    t = body.shape[0]
    windows = np.stack([padded[i : i + 2 * k + 1].ravel() for i in range(t)], axis=0)
    h = np.tanh(windows @ w1.T + b1)
    return 0.9 * np.tanh(h @ w2.T + b2)


def generate_synthetic(
    n_sequences: int,
    frames: int,
    seed: int,
    noise: float = 0.0,
    fps: float = 30.0,
    feat_dim: int = 0,
    with_clarity: bool = False,
) -> list[PoseSequence]:
    """Synthetic correlated data: smooth sinusoidal body curves, hands a fixed
    smooth function of the local body window plus optional Gaussian noise.

    Fully deterministic given the seed; the body->hand map is shared across
    all seeds so held-out sequences follow the same underlying relation.
    """
    rng = np.random.default_rng(seed)
    out = []
    t_axis = np.arange(frames) / fps
    for s in range(n_sequences):
        body = np.zeros((frames, BODY_DIM))
        for d in range(BODY_DIM):
            amps = rng.uniform(0.1, 1.0, size=3)
            amps *= 0.9 / amps.sum()
            freqs = rng.uniform(0.1, 0.8, size=3)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
            for a, f, p in zip(amps, freqs, phases):
                body[:, d] += a * np.sin(2.0 * np.pi * f * t_axis + p)
        hands = _hands_from_body(body)
        if noise > 0.0:
            hands = hands + noise * rng.normal(size=hands.shape)
        feats = None
        if feat_dim > 0:
            _, _, _, _, wf = _hand_map_weights(feat_dim)
            feats = np.tanh(hands @ wf.T)
            if noise > 0.0:
                feats = feats + noise * rng.normal(size=feats.shape)
        clarity = (rng.random(frames) < 0.7).astype(np.int64) if with_clarity else None
        out.append(PoseSequence(f"synth{s:03d}", fps, body, hands, feats, clarity))
    return out
