"""Axis-angle rotation math, kinematic trees, and forward kinematics.

Rotations are 3-vectors in axis-angle form: the direction is the rotation
axis and the magnitude is the angle in radians. The canonical form keeps the
magnitude in [0, pi]; the zero vector is the identity rotation.

The standard skeleton used throughout the toolkit has 48 joints in a fixed
order: 6 arm joints (root, chest, both shoulders, both elbows), then 21
left-hand joints (wrist + 20 finger joints), then 21 right-hand joints.
Pose vectors map onto it as body (T, 18) = 6 joints x 3 and hands (T, 126)
= 42 joints x 3.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARM_JOINTS = 6
HAND_JOINTS_PER_HAND = 21
HAND_JOINTS = 2 * HAND_JOINTS_PER_HAND
TOTAL_JOINTS = ARM_JOINTS + HAND_JOINTS
BODY_DIM = ARM_JOINTS * 3          # 18
HAND_DIM = HAND_JOINTS * 3         # 126

# Below this angle the Rodrigues coefficients switch to their series limits.
_SMALL_ANGLE = 1e-8


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues formula: axis-angle vector(s) (..., 3) -> rotation matrices (..., 3, 3).

    Numerically stable at |v| -> 0 (series expansion below the small-angle
    threshold, identity at exactly zero).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"axis-angle vectors need a trailing dimension of 3, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("axis-angle components must be finite")

    theta = np.linalg.norm(v, axis=-1)
    theta2 = theta * theta
    small = theta < _SMALL_ANGLE
    # a = sin(t)/t, b = (1-cos(t))/t^2, both applied to the unnormalized vector.
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2))

    zeros = np.zeros_like(theta)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    k = np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def canonicalize(v) -> np.ndarray:
    """Rewrap axis-angle vector(s) so every rotation has magnitude <= pi.

    Encodes the same rotation (angle theta about axis u equals angle
    2*pi - theta about -u). Idempotent; already-canonical input is returned
    unchanged (as a copy).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"axis-angle vectors need a trailing dimension of 3, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("axis-angle components must be finite")

    out = v.copy()
    theta = np.linalg.norm(v, axis=-1)
    needs = theta > np.pi
    if not np.any(needs):
        return out

    t = theta[needs]
    wrapped = np.mod(t, 2.0 * np.pi)
    # angle in (pi, 2pi) flips to (2pi - angle) about the opposite axis;
    # angle in [0, pi] keeps its axis.
    flip = wrapped > np.pi
    new_angle = np.where(flip, 2.0 * np.pi - wrapped, wrapped)
    sign = np.where(flip, -1.0, 1.0)
    scale = sign * new_angle / t
    out[needs] = v[needs] * scale[:, None]
    # guard the pi boundary against rounding creep
    norms = np.linalg.norm(out[needs], axis=-1)
    over = norms > np.pi
    if np.any(over):
        idx = np.where(needs)
        sel = tuple(i[over] for i in idx)
        out[sel] *= (np.pi / norms[over])[:, None]
    return out


@dataclass(frozen=True)
class KinematicTree:
    """Fixed joint hierarchy: names, parent indices (-1 = root), rest offsets.

    Joints are topologically ordered (parent index < joint index). Rest
    offsets are bone vectors from parent to child in the rest pose; root
    joints sit at the origin and their offset entry is unused. Bone lengths
    are constant and strictly positive.
    """

    names: tuple[str, ...]
    parents: np.ndarray = field(repr=False)     # (J,) int
    offsets: np.ndarray = field(repr=False)     # (J, 3) float

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        j = len(self.names)
        if parents.shape != (j,) or offsets.shape != (j, 3):
            raise ValueError(
                f"inconsistent tree: {j} names, parents {parents.shape}, offsets {offsets.shape}"
            )
        for i, p in enumerate(parents):
            if p >= i or p < -1:
                raise ValueError(f"joint {i} ({self.names[i]}): parent index {p} must be -1 or < {i}")
            if p >= 0 and np.linalg.norm(offsets[i]) <= 0.0:
                raise ValueError(f"joint {i} ({self.names[i]}): bone length must be strictly positive")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def bone_lengths(self) -> np.ndarray:
        """Rest bone length per joint (0 for roots)."""
        lengths = np.linalg.norm(self.offsets, axis=-1)
        lengths[self.parents < 0] = 0.0
        return lengths

    def shoulder_indices(self) -> tuple[int, int]:
        """Indices of the two shoulder joints, located by name ('shoulder' substring)."""
        hits = [i for i, n in enumerate(self.names) if "shoulder" in n.lower()]
        if len(hits) != 2:
            raise ValueError(
                f"expected exactly 2 joints with 'shoulder' in their name, found {len(hits)}: "
                f"{[self.names[i] for i in hits]}"
            )
        return hits[0], hits[1]


def load_tree(path) -> KinematicTree:
    """Parse a kinematic tree file: one joint per line `name parent ox oy oz`.

    Parent -1 marks a root. Lines starting with '#' and blank lines are ignored.
    """
    path = Path(path)
    names, parents, offsets = [], [], []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 'name parent ox oy oz', got {len(parts)} fields")
            try:
                parent = int(parts[1])
                off = [float(x) for x in parts[2:5]]
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            names.append(parts[0])
            parents.append(parent)
            offsets.append(off)
    if not names:
        raise ValueError(f"{path}: no joints found")
    return KinematicTree(tuple(names), np.array(parents), np.array(offsets))


def save_tree(tree: KinematicTree, path) -> None:
    with open(path, "w") as f:
        f.write("# name parent_index ox oy oz\n")
        for name, parent, off in zip(tree.names, tree.parents, tree.offsets):
            f.write(f"{name} {parent} {off[0]:.17g} {off[1]:.17g} {off[2]:.17g}\n")


def default_tree() -> KinematicTree:
    """The bundled reference skeleton (shoulder-to-shoulder distance 0.30 units)."""
    ref = importlib.resources.files("handprior") / "assets" / "reference_skeleton.txt"
    names, parents, offsets = [], [], []
    for lineno, raw in enumerate(ref.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        names.append(parts[0])
        parents.append(int(parts[1]))
        offsets.append([float(x) for x in parts[2:5]])
    return KinematicTree(tuple(names), np.array(parents), np.array(offsets))


def fk_positions(tree: KinematicTree, angles: np.ndarray) -> np.ndarray:
    """Forward kinematics over a generic tree.

    angles: (T, J, 3) axis-angle per frame per joint. Returns (T, J, 3)
    positions: roots at the origin, every other joint at
    parent position + (accumulated parent rotation) @ rest offset.
    """
    angles = np.asarray(angles, dtype=np.float64)
    j = tree.num_joints
    if angles.ndim != 3 or angles.shape[1] != j or angles.shape[2] != 3:
        raise ValueError(f"angles must be (T, {j}, 3), got {angles.shape}")
    t = angles.shape[0]

    rot = axis_angle_to_matrix(angles)          # (T, J, 3, 3) local rotations
    acc = np.empty_like(rot)                    # accumulated global rotations
    pos = np.zeros((t, j, 3), dtype=np.float64)
    for i in range(j):
        p = tree.parents[i]
        if p < 0:
            acc[:, i] = rot[:, i]
            # root stays at the origin
        else:
            pos[:, i] = pos[:, p] + np.einsum("tab,b->ta", acc[:, p], tree.offsets[i])
            acc[:, i] = acc[:, p] @ rot[:, i]
    return pos


def forward_kinematics(tree: KinematicTree, body: np.ndarray, hands: np.ndarray) -> np.ndarray:
    """FK for the standard 48-joint partition: body (T, 18) + hands (T, 126) -> (T, 48, 3).

    The tree must follow the standard layout (6 arm joints, then 21 left-hand,
    then 21 right-hand joints, in file order).
    """
    body = np.asarray(body, dtype=np.float64)
    hands = np.asarray(hands, dtype=np.float64)
    if tree.num_joints != TOTAL_JOINTS:
        raise ValueError(
            f"standard-partition FK needs a {TOTAL_JOINTS}-joint tree "
            f"({ARM_JOINTS} arm + {HAND_JOINTS} hand), got {tree.num_joints} joints"
        )
    if body.ndim != 2 or body.shape[1] != BODY_DIM:
        got = body.shape[1] if body.ndim == 2 else None
        raise ValueError(
            f"body angles must be (T, {BODY_DIM}) = {ARM_JOINTS} joints x 3, "
            f"got {body.shape} ({None if got is None else got // 3} joints)"
        )
    if hands.ndim != 2 or hands.shape[1] != HAND_DIM:
        got = hands.shape[1] if hands.ndim == 2 else None
        raise ValueError(
            f"hand angles must be (T, {HAND_DIM}) = {HAND_JOINTS} joints x 3, "
            f"got {hands.shape} ({None if got is None else got // 3} joints)"
        )
    if body.shape[0] != hands.shape[0]:
        raise ValueError(f"body has {body.shape[0]} frames but hands has {hands.shape[0]}")

    t = body.shape[0]
    angles = np.concatenate(
        [body.reshape(t, ARM_JOINTS, 3), hands.reshape(t, HAND_JOINTS, 3)], axis=1
    )
    return fk_positions(tree, angles)


def hand_positions(positions: np.ndarray) -> np.ndarray:
    """The 42 hand-joint positions (T, 42, 3) out of standard FK output (T, 48, 3)."""
    if positions.shape[1] != TOTAL_JOINTS:
        raise ValueError(f"expected (T, {TOTAL_JOINTS}, 3) positions, got {positions.shape}")
    return positions[:, ARM_JOINTS:, :]


def measure_shoulder_distance(tree: KinematicTree, positions: np.ndarray) -> float:
    """Mean shoulder-to-shoulder distance over all frames of an FK position array."""
    a, b = tree.shoulder_indices()
    d = np.linalg.norm(positions[:, a, :] - positions[:, b, :], axis=-1)
    return float(d.mean())
