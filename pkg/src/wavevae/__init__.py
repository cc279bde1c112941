"""Wavelet-packet VQ-VAE adversarial examples on a from-scratch autodiff engine."""

from .attacks import AttackConfig, AttackResult, latent_attack, run_attack, run_campaign
from .classifier import ConvClassifier
from .config import RunConfig
from .datasets import Dataset, generate, load_dataset, save_dataset
from .metrics import MetricsReport, evaluate, fid, score_fid, score_lpips
from .persistence import load_weights, save_weights
from .tensor import Tensor, precision
from .vqvae import WaveletVQVAE
from .wavelet import WaveletPyramid, wpt_forward, wpt_inverse

__all__ = [
    "AttackConfig",
    "AttackResult",
    "ConvClassifier",
    "Dataset",
    "MetricsReport",
    "RunConfig",
    "Tensor",
    "WaveletPyramid",
    "WaveletVQVAE",
    "evaluate",
    "fid",
    "generate",
    "latent_attack",
    "load_dataset",
    "load_weights",
    "precision",
    "run_attack",
    "run_campaign",
    "save_dataset",
    "save_weights",
    "score_fid",
    "score_lpips",
    "wpt_forward",
    "wpt_inverse",
]

__version__ = "0.1.0"
