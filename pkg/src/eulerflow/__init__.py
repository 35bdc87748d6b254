"""
eulerflow: normalizing flows on the rotation group SO(3).

Rotations are parameterised by (omega, phi, kappa) Euler angles, and the
density is built from coupling layers whose circle bijections are convex
combinations of Moebius maps.
"""

from .datasets import (Dataset, GimbalSpec, SyntheticSpec, generate_conditional_toy,
                       generate_gimbal, generate_synthetic, load, save)
from .estimator import EulerFlowDensity
from .exceptions import (ConvergenceFailure, CorruptRecord, EulerFlowError,
                         FormatVersionMismatch, InvalidParameter, InvalidRotation,
                         NonFiniteLoss, ShapeMismatch, StateMismatch, UnknownKind)
from .flow import HAAR, TORUS, CouplingLayer, FlowModel
from .mobius import MobiusCombination
from .rotations import (euler_to_rotmat, geodesic_distance, haar_sample, other_preimage,
                        rotmat_to_euler)
from .training import (MetricsReport, TrainConfig, bench, evaluate_ll, evaluate_pose,
                       load_checkpoint, preset, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceFailure", "CorruptRecord", "CouplingLayer", "Dataset", "EulerFlowDensity",
    "EulerFlowError", "FlowModel", "FormatVersionMismatch", "GimbalSpec", "HAAR",
    "InvalidParameter", "InvalidRotation", "MetricsReport", "MobiusCombination",
    "NonFiniteLoss", "ShapeMismatch", "StateMismatch", "SyntheticSpec", "TORUS",
    "TrainConfig", "UnknownKind", "bench", "euler_to_rotmat", "evaluate_ll", "evaluate_pose",
    "generate_conditional_toy", "generate_gimbal", "generate_synthetic", "geodesic_distance",
    "haar_sample", "load", "load_checkpoint", "other_preimage", "preset", "rotmat_to_euler",
    "save", "save_checkpoint", "train",
]
