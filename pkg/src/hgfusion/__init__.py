"""Multi-focus image fusion with a small hourglass network, written with numpy."""

from .dataset import (
    SegmentedSample,
    SynthesisConfig,
    TrainingExample,
    make_commutative_batch,
    procedural_samples,
    synthesize_example,
)
from .fusion import AVERAGE, DUMMY_A, DUMMY_B, Fuser, commutativity_gap, fuse_burst, fuse_pair
from .losses import bce_loss, nps, regression_loss
from .metrics import metric_report, q_g, q_mi, q_ncie, q_s, q_te, ssim
from .network import HourglassConfig, Model
from .training import Schedule, train

__version__ = "0.1.0"

__all__ = [
    "AVERAGE",
    "DUMMY_A",
    "DUMMY_B",
    "Fuser",
    "HourglassConfig",
    "Model",
    "Schedule",
    "SegmentedSample",
    "SynthesisConfig",
    "TrainingExample",
    "bce_loss",
    "commutativity_gap",
    "fuse_burst",
    "fuse_pair",
    "make_commutative_batch",
    "metric_report",
    "nps",
    "procedural_samples",
    "q_g",
    "q_mi",
    "q_ncie",
    "q_s",
    "q_te",
    "regression_loss",
    "ssim",
    "synthesize_example",
    "train",
]
