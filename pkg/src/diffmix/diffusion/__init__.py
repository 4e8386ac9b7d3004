from .denoiser import DenoiserInterface, ToyDenoiser, timestep_embedding
from .optim import Adam
from .sampler import SamplerConfig, denoise_from, guided_eps
from .schedule import (
    NoiseSchedule,
    build_schedule,
    forward_noise,
    forward_noise_batch,
    insert_reference,
    insertion_step,
)
from .text import Condition, ToyTextEncoder
from .training import diffusion_loss, train_step

__all__ = [
    "Adam", "Condition", "DenoiserInterface", "NoiseSchedule", "SamplerConfig", "ToyDenoiser",
    "ToyTextEncoder", "build_schedule", "denoise_from", "diffusion_loss", "forward_noise",
    "forward_noise_batch", "guided_eps", "insert_reference", "insertion_step", "timestep_embedding",
    "train_step",
]
