"""Desk-scale laboratory for concept-bottleneck architectures."""

from .data import gen_dot, gen_trig, gen_xor, generate, subsample_concepts
from .intervene import InterventionSpec, intervene, intervention_curve
from .metrics import cas, homogeneity, kde_mi, kmedoids, linear_probe
from .models import ArchitectureConfig, evaluate, init
from .train import TrainConfig
from .train import train as fit

__all__ = [
    "ArchitectureConfig", "InterventionSpec", "TrainConfig",
    "cas", "evaluate", "fit", "gen_dot", "gen_trig", "gen_xor", "generate",
    "homogeneity", "init", "intervene", "intervention_curve",
    "kde_mi", "kmedoids", "linear_probe", "subsample_concepts",
]
