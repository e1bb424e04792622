"""Articulated objects with hidden mechanisms, adaptive experts and a diffusion policy."""

from .articulation import GenConfig, build_instance, grasp, is_success, part_pose, step_to
from .expert import collect_dataset, rollout_expert, sparsify
from .mechanisms import CATEGORIES, HiddenPriors, apply_mechanism, sample_hidden
from .perception import fps, observe, sample_points

__version__ = "0.1.0"
