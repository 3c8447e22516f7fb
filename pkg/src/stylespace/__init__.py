"""Style-representation learning for portrait images.

A numpy-backed toolkit that learns continuous style embeddings with a
convolutional VAE trained under a combined KL / reconstruction / perceptual
/ expert-triplet objective, analyzes the learned space (PCA, exact t-SNE,
k-NN zero-shot artist classification, latent interpolation, triplet-loss
activation maps), and collects human triplet labels over HTTP.
"""

from .analysis import interpolate, knn_classify, pca, tsne
from .data import gen_synthetic, ingest, make_triplets, oracle_label, split
from .losses import LossWeights, TripletBatch, kl_loss, perceptual_loss, recon_loss, total_loss, triplet_loss
from .nets import LatentCode, PerceptualNet, StyleEncoderHead, VaeModel, reparameterize
from .tensor import AdamState, Tensor, adam_step, backward, conv2d, matmul
from .train import Checkpoint, TrainConfig, eval_triplet_satisfaction, load_checkpoint, save_checkpoint, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "LatentCode",
    "LossWeights",
    "PerceptualNet",
    "StyleEncoderHead",
    "Tensor",
    "TrainConfig",
    "TripletBatch",
    "VaeModel",
    "adam_step",
    "backward",
    "conv2d",
    "eval_triplet_satisfaction",
    "gen_synthetic",
    "ingest",
    "interpolate",
    "kl_loss",
    "knn_classify",
    "load_checkpoint",
    "make_triplets",
    "matmul",
    "oracle_label",
    "pca",
    "perceptual_loss",
    "recon_loss",
    "reparameterize",
    "save_checkpoint",
    "split",
    "total_loss",
    "train_model",
    "triplet_loss",
    "tsne",
]
