"""Test-time concept interventions and intervention-curve generation.

Correct interventions impose the ground-truth concept value; incorrect
interventions impose its binary complement. For the embedding model an
intervened probability of 1 (0) collapses the mixture onto the active
(inactive) embedding; for scalar bottlenecks the bottleneck entry itself
is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .data import SyntheticDataset
from .models import ArchitectureConfig
from .rng import stream

POLICIES = ("correct", "incorrect")


@dataclass
class InterventionSpec:
    mask: np.ndarray  # (k,) bool: which concepts are set
    values: np.ndarray  # (k,) or (batch, k) in {0, 1}; ignored where unmasked
    groups: list | None = None  # optional partition of concept indices

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.groups is not None:
            flat = sorted(i for g in self.groups for i in g)
            if flat != list(range(self.mask.size)):
                raise ValueError("groups must partition the concept index set")


def intervene(
    params: dict, cfg: ArchitectureConfig, x: np.ndarray, spec: InterventionSpec
):
    """Forward pass with the spec's masked concepts imposed; returns
    (logits, record)."""
    if not cfg.supports_interventions():
        raise ValueError(f"model kind {cfg.kind!r} does not support interventions")
    if spec.mask.size != cfg.n_concepts:
        raise ValueError(f"mask length {spec.mask.size} != concept count {cfg.n_concepts}")
    batch = np.asarray(x).shape[0]
    mask = np.broadcast_to(spec.mask.astype(np.float64), (batch, cfg.n_concepts))
    values = np.broadcast_to(spec.values, (batch, cfg.n_concepts))
    return models.evaluate(params, cfg, x, sub=(mask, values))


def intervention_subset(k: int, d: int, seed: int) -> np.ndarray:
    """The size-d concept subset intervened on for a given seed; shared by
    every model evaluated with the same (seed, d)."""
    if not 0 <= d <= k:
        raise ValueError(f"subset size must be in [0, {k}], got {d}")
    return np.sort(stream("intervene", seed, d).choice(k, size=d, replace=False))


def intervention_curve(
    params: dict,
    cfg: ArchitectureConfig,
    ds: SyntheticDataset,
    policy: str = "correct",
    granularity: str = "concepts",
    seeds: list | None = None,
    groups: list | None = None,
) -> list[dict]:
    """Test accuracy as 0..k concepts (or 0..#groups groups) are imposed.

    Returns one row per intervention size d with the per-seed accuracies;
    aggregation into mean/CI is left to the caller.
    """
    from .metrics import accuracy_metrics

    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if granularity not in ("concepts", "groups"):
        raise ValueError(f"unknown granularity {granularity!r}")
    if not seeds:
        raise ValueError("need at least one seed")
    x, c, y = ds.subset("test")
    if x.shape[0] == 0:
        raise ValueError("test split is empty")
    k = cfg.n_concepts
    if granularity == "groups":
        if not groups:
            raise ValueError("granularity=groups requires a group partition")
        units = groups
    else:
        units = [[i] for i in range(k)]
    target = c if policy == "correct" else 1.0 - c

    rows = []
    for d in range(len(units) + 1):
        accs = []
        for seed in seeds:
            unit_idx = intervention_subset(len(units), d, seed)
            concept_idx = [i for u in unit_idx for i in units[u]]
            mask = np.zeros(k, dtype=bool)
            mask[concept_idx] = True
            spec = InterventionSpec(mask=mask, values=target)
            logits, _ = intervene(params, cfg, x, spec)
            acc, _ = accuracy_metrics(logits, None, y, None)
            accs.append(acc)
        rows.append({"policy": policy, "d": d, "accuracies": accs})
    return rows
