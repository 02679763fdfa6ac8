"""Buried-object anomaly detection in multi-polarization GPR volumes."""

__version__ = "0.1.0"

from .anomaly import AnomalyMask, DetectorConfig, anomaly_score, classify, score_volume, select_threshold
from .autoencoder import ArchitectureSpec, TrainConfig, build_model, decode, encode, train
from .blocking import BlockGeometry, aggregate_mask, extract_block, plan_blocks
from .estimator import HiddenInstabilityDetector, PolarizationFuser
from .metrics import auc_oracle, confusion, roc
from .preprocess import estimate_lag, fuse_ascans, fuse_volumes
from .synth import SceneSpec, TargetSpec, generate_dataset
from .volume import Polarization, Volume, load_volume, normalize, save_volume, slice_bscan
