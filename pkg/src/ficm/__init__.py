"""Flow-based intrinsic curiosity for sparse-reward pixel RL."""

__version__ = "0.1.0"

from .config import (
    CorrelationConfig,
    CuriosityConfig,
    EnvConfig,
    ExperimentConfig,
    TrainConfig,
    WarpConfig,
    load_config,
    save_config,
)
from .curiosity import (
    FlowCuriosity,
    IcmCuriosity,
    IcmNetwork,
    IcmPixelsCuriosity,
    IcmPixelsNetwork,
    NullCuriosity,
    RewardBreakdown,
    build_curiosity,
    ficm_reward,
    icm_reward,
)
from .flownets import (
    FlowField,
    FlowPredictorC,
    FlowPredictorS,
    build_flow_predictor,
    correlation,
    count_parameters,
    predict_flow,
)
from .maze_env import MazeEnv, MazeLayout, Pose, StepResult
from .policy import PolicyNet, Trajectory, Transition, a3c_update, compute_returns, policy_forward, select_action
from .trainer import RunStats, train
from .warping import bilinear_sample, warp, warp_batch

__all__ = [
    "__version__",
    "CorrelationConfig",
    "CuriosityConfig",
    "EnvConfig",
    "ExperimentConfig",
    "TrainConfig",
    "WarpConfig",
    "load_config",
    "save_config",
    "FlowCuriosity",
    "IcmCuriosity",
    "IcmNetwork",
    "IcmPixelsCuriosity",
    "IcmPixelsNetwork",
    "NullCuriosity",
    "RewardBreakdown",
    "build_curiosity",
    "ficm_reward",
    "icm_reward",
    "FlowField",
    "FlowPredictorC",
    "FlowPredictorS",
    "build_flow_predictor",
    "correlation",
    "count_parameters",
    "predict_flow",
    "MazeEnv",
    "MazeLayout",
    "Pose",
    "StepResult",
    "PolicyNet",
    "Trajectory",
    "Transition",
    "a3c_update",
    "compute_returns",
    "policy_forward",
    "select_action",
    "RunStats",
    "train",
    "bilinear_sample",
    "warp",
    "warp_batch",
]
