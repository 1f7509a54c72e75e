"""Multi-class semantic segmentation by recursive noise diffusion."""

from .dataset import AugmentConfig, ClassPalette, Sample, generate_shapes_dataset, one_hot_encode
from .denoiser import DenoiserConfig, DenoiserNetwork, count_parameters, time_embed
from .diffusion import NoiseSchedule, diffuse, make_schedule, mse_loss, recover_clean, total_noise
from .kernels import BACKEND
from .metrics import ConfusionMatrix, evaluate, f1, iou, miou
from .nn import efficient_attention
from .persistence import load_checkpoint, save_checkpoint
from .sampler import SampleConfig, argmax_decode, sample, sample_ensemble
from .trainer import TrainConfig, TrainReport, train, train_sample_multiscale, train_sample_recursive

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "BACKEND", "ClassPalette", "ConfusionMatrix", "DenoiserConfig",
    "DenoiserNetwork", "NoiseSchedule", "Sample", "SampleConfig", "TrainConfig", "TrainReport",
    "argmax_decode", "count_parameters", "diffuse", "efficient_attention", "evaluate", "f1",
    "generate_shapes_dataset", "iou", "load_checkpoint", "make_schedule", "miou", "mse_loss",
    "one_hot_encode", "recover_clean", "sample", "sample_ensemble", "save_checkpoint",
    "time_embed", "total_noise", "train", "train_sample_multiscale", "train_sample_recursive",
]
