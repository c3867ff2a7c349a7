"""Desk-scale trainable ULHM: MLPs with hand-written gradients, losses, data and schedules."""
from .losses import (
    LossWeights,
    loss_centroid,
    loss_consist,
    loss_contrastive,
    loss_cross_entropy,
    loss_local,
    loss_recon,
)
from .model import Modality, ULHMBatch, ULHMModel, total_ulhm_loss
from .network import Network, NetworkSpec, backward, forward, init_network
from .optim import AdamState, adam_step, sgd_step
from .synthetic import MaskSpec, SyntheticSpec, apply_mask, gen_synthetic
from .training import TrainConfig, TrainResult, train, train_recovery, train_zeroshot

__all__ = [
    "AdamState", "LossWeights", "MaskSpec", "Modality", "Network", "NetworkSpec", "SyntheticSpec",
    "TrainConfig", "TrainResult", "ULHMBatch", "ULHMModel", "adam_step", "apply_mask", "backward",
    "forward", "gen_synthetic", "init_network", "loss_centroid", "loss_consist", "loss_contrastive",
    "loss_cross_entropy", "loss_local", "loss_recon", "sgd_step", "total_ulhm_loss", "train",
    "train_recovery", "train_zeroshot",
]
