"""Time-conditioned monocular visual odometry at a verifiable desk scale.

The package estimates frame-to-frame camera motion from consecutive
observations (optical flow, depth, intrinsics) with a network whose
features are conditioned on the inter-frame time gap, making one model
robust to changes in observation rate. It ships with an exact synthetic
scene generator, KITTI-style evaluation metrics, a multi-rate training
loop with an ablation harness, a scikit-learn estimator facade, and a
CLI (``tempovo``).
"""

from .estimator import VisualOdometer
from .fisher import fisher_mode, fisher_nll, log_normalizer, trace_surrogate
from .flow3d import Flow3DLayer, compute_scene_flow, scene_flow_torch
from .geometry import (
    CameraIntrinsics,
    PoseSE3,
    Trajectory,
    accumulate,
    back_project,
    compose,
    project,
    relative,
)
from .metrics import EvalReport, align_trajectories, ate, evaluate, scale_error
from .model import (
    EgomotionNet,
    EgomotionPrediction,
    ModelConfig,
    load_checkpoint,
    predict_pairs,
    save_checkpoint,
)
from .synth import FramePair, SceneSpec, generate_sequence, resample_frequency
from .temporal import TimeConditionLayer, encode_time
from .train import TrainConfig, evaluate_model, pose_loss, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "EgomotionNet",
    "EgomotionPrediction",
    "EvalReport",
    "FramePair",
    "ModelConfig",
    "PoseSE3",
    "SceneSpec",
    "TimeConditionLayer",
    "TrainConfig",
    "Trajectory",
    "VisualOdometer",
    "accumulate",
    "align_trajectories",
    "ate",
    "back_project",
    "compose",
    "encode_time",
    "evaluate",
    "evaluate_model",
    "Flow3DLayer",
    "compute_scene_flow",
    "fisher_mode",
    "fisher_nll",
    "generate_sequence",
    "load_checkpoint",
    "log_normalizer",
    "pose_loss",
    "predict_pairs",
    "project",
    "relative",
    "resample_frequency",
    "run_ablation",
    "save_checkpoint",
    "scale_error",
    "scene_flow_torch",
    "trace_surrogate",
    "train",
]
