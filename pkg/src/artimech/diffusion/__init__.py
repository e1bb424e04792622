"""Conditional DDPM over short action windows."""

from .net import DenoiserNet, MLP, timestep_embedding
from .policy import (
    Batch, PolicyConfig, Windows, build_windows, denoise_step, fit, grad_check, load_model,
    loss_and_grad, q_sample, sample_trajectory, save_model, train,
)
from .schedule import NoiseSchedule, make_schedule
