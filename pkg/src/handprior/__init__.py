"""Body-motion prior for 3D conversational hand gestures.

Predicts 3D hand pose sequences (axis-angle, 42 joints) from 3D arm pose
sequences with a temporal encoder / UNet / decoder generator, optionally
adversarially trained on motion deltas and optionally conditioned on
precomputed image features. Ships nearest-neighbor and median-pose baselines
and a Procrustes-aligned millimeter joint-error evaluation.
"""

from .baselines import SegmentDB, build_segment_db, median_pose, median_predict, nn_predict
from .data import (
    NormalizationStats,
    PoseSequence,
    WindowedSample,
    fit_normalization,
    generate_synthetic,
    load_sequence,
    make_windows,
    save_sequence,
    split_train_val,
)
from .evaluation import (
    EvalReport,
    EvalRow,
    evaluate,
    joint_error_mm,
    nearest_hand_retrieval,
    procrustes_align,
)
from .kinematics import (
    KinematicTree,
    axis_angle_to_matrix,
    canonicalize,
    default_tree,
    forward_kinematics,
    load_tree,
    save_tree,
)
from .model import (
    DeltaDiscriminator,
    GeneratorConfig,
    HandGenerator,
    generate,
    load_checkpoint,
    save_checkpoint,
    synthesize_long,
    temporal_deltas,
)
from .training import TrainingConfig, TrainLog, gan_losses, l1_loss, total_generator_loss, train

__version__ = "0.1.0"
