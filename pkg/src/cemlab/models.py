"""Parameter containers and forward passes for the concept-embedding model
and its baselines, plus checkpoint serialization.

All five architectures share an MLP trunk (default widths 128, 128 with
leaky-ReLU). The embedding model represents each concept as a mixture of a
learned active and inactive embedding, mixed by a shared scoring head; the
hybrid baseline pads k supervised sigmoid units with an unsupervised
leaky-ReLU block so the bottleneck width matches (k * m by construction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import DiffArray, Tape
from .rng import stream

MODEL_KINDS = ("cem", "bool", "fuzzy", "hybrid", "noconcept")


@dataclass
class ArchitectureConfig:
    kind: str
    n_features: int
    n_concepts: int
    n_classes: int = 2
    emb_size: int = 128
    hidden: tuple = (128, 128)
    extra_capacity: int | None = None  # hybrid/noconcept only; default k*(m-1)
    leaky_slope: float = 0.01
    label_inputs: str = "probs"  # feed sigmoid probs or raw logits to the label head
    straight_through: bool = False  # bool kind: pass sigmoid gradient through the threshold
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("n_features", "n_concepts", "n_classes", "emb_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if any(w < 1 for w in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.label_inputs not in ("probs", "logits"):
            raise ValueError(f"label_inputs must be 'probs' or 'logits', got {self.label_inputs!r}")
        self.hidden = tuple(self.hidden)
        if self.kind in ("hybrid", "noconcept"):
            if self.extra_capacity is None:
                self.extra_capacity = self.n_concepts * (self.emb_size - 1)
                # Capacity parity with the embedding model for identical (k, m).
                assert self.n_concepts + self.extra_capacity == self.n_concepts * self.emb_size
            if self.extra_capacity < 1:
                raise ValueError(f"extra_capacity must be positive, got {self.extra_capacity}")

    @property
    def bottleneck_width(self) -> int:
        if self.kind == "cem":
            return self.n_concepts * self.emb_size
        if self.kind in ("bool", "fuzzy"):
            return self.n_concepts
        return self.n_concepts + self.extra_capacity

    @property
    def trunk_width(self) -> int:
        return self.hidden[-1] if self.hidden else self.n_features

    def supports_interventions(self) -> bool:
        return self.kind != "noconcept"


@dataclass
class BottleneckRecord:
    """Per-sample bottleneck state captured during a forward pass.

    probs are the model-predicted concept probabilities (before any
    substitution); concept_reprs holds the per-concept representation
    vector used by alignment metrics; bottleneck is the flattened vector
    fed to the label predictor (after substitution, if any).
    """

    probs: np.ndarray  # (batch, k)
    concept_logits: np.ndarray  # (batch, k)
    concept_reprs: list  # k arrays (batch, r_i)
    bottleneck: np.ndarray  # (batch, width)
    pos_embeddings: list = field(default_factory=list)  # cem only, (batch, m) each
    neg_embeddings: list = field(default_factory=list)


@dataclass
class ForwardResult:
    """Autodiff handles from one forward pass (train mode keeps the tape live)."""

    logits: DiffArray
    concept_logits: DiffArray | None
    probs: DiffArray | None
    bottleneck: DiffArray
    record: BottleneckRecord


def parameter_shapes(cfg: ArchitectureConfig) -> dict:
    shapes = {}
    widths = (cfg.n_features,) + cfg.hidden
    for i in range(len(cfg.hidden)):
        shapes[f"enc{i}_W"] = (widths[i], widths[i + 1])
        shapes[f"enc{i}_b"] = (1, widths[i + 1])
    h = cfg.trunk_width
    if cfg.kind == "cem":
        for i in range(cfg.n_concepts):
            shapes[f"pos{i}_W"] = (h, cfg.emb_size)
            shapes[f"pos{i}_b"] = (1, cfg.emb_size)
            shapes[f"neg{i}_W"] = (h, cfg.emb_size)
            shapes[f"neg{i}_b"] = (1, cfg.emb_size)
        shapes["score_W"] = (2 * cfg.emb_size, 1)
        shapes["score_b"] = (1, 1)
    else:
        shapes["conc_W"] = (h, cfg.n_concepts)
        shapes["conc_b"] = (1, cfg.n_concepts)
        if cfg.kind in ("hybrid", "noconcept"):
            shapes["extra_W"] = (h, cfg.extra_capacity)
            shapes["extra_b"] = (1, cfg.extra_capacity)
    shapes["head_W"] = (cfg.bottleneck_width, cfg.n_classes)
    shapes["head_b"] = (1, cfg.n_classes)
    return shapes


def init(cfg: ArchitectureConfig) -> dict:
    """Fan-in-scaled uniform weights, zero biases; deterministic in cfg.seed."""
    rng = stream("init", cfg.kind, cfg.seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def lift(params: dict, tape: Tape) -> dict:
    return {name: tape.leaf(v) for name, v in params.items()}


def _affine(x: DiffArray, p: dict, prefix: str) -> DiffArray:
    return ad.add(ad.matmul(x, p[f"{prefix}_W"]), p[f"{prefix}_b"])


def _trunk(x: DiffArray, p: dict, cfg: ArchitectureConfig) -> DiffArray:
    h = x
    for i in range(len(cfg.hidden)):
        h = ad.leaky_relu(_affine(h, p, f"enc{i}"), cfg.leaky_slope)
    return h


def _substitute(probs: DiffArray, sub, tape: Tape) -> DiffArray:
    """Replace masked entries by the given values (constants, no gradient)."""
    if sub is None:
        return probs
    mask, values = sub
    mask = np.asarray(mask, dtype=np.float64)
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), probs.shape)
    keep = ad.mul(probs, tape.leaf(1.0 - mask))
    return ad.add(keep, tape.leaf(values * mask))


def forward(
    lifted: dict,
    cfg: ArchitectureConfig,
    x: np.ndarray,
    mode: str = "eval",
    sub=None,
) -> ForwardResult:
    """Run one forward pass on a shared tape.

    `sub`, when given, is a (mask, values) pair of (batch, k) arrays: masked
    concept probabilities (or bottleneck entries, for the scalar baselines)
    are replaced by the given constants before the label predictor. This
    realizes both test-time interventions and training-time random
    substitutions; gradients never flow through substituted entries.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.n_features:
        raise ValueError(f"expected input (batch, {cfg.n_features}), got {x.shape}")
    if sub is not None and cfg.kind == "noconcept":
        raise ValueError("concept substitution is not supported for the no-concept model")
    tape = next(iter(lifted.values())).tape
    xd = tape.leaf(x)
    h = _trunk(xd, lifted, cfg)

    if cfg.kind == "cem":
        return _forward_cem(lifted, cfg, h, sub, tape)
    return _forward_scalar(lifted, cfg, h, sub, tape, mode)


def _forward_cem(p, cfg, h, sub, tape) -> ForwardResult:
    mask = None if sub is None else np.asarray(sub[0], dtype=np.float64)
    values = None if sub is None else np.asarray(sub[1], dtype=np.float64)
    mixed, logits_cols, probs_cols = [], [], []
    pos_vals, neg_vals = [], []
    for i in range(cfg.n_concepts):
        cpos = ad.leaky_relu(_affine(h, p, f"pos{i}"), cfg.leaky_slope)
        cneg = ad.leaky_relu(_affine(h, p, f"neg{i}"), cfg.leaky_slope)
        logit_i = _affine(ad.concat([cpos, cneg]), p, "score")  # (batch, 1)
        prob_i = ad.sigmoid(logit_i)
        if mask is None:
            p_eff = prob_i
        else:
            m_i = mask[:, i : i + 1]
            v_i = np.broadcast_to(values[:, i : i + 1] if values.ndim == 2 else values[i], m_i.shape)
            p_eff = _substitute(prob_i, (m_i, v_i), tape)
        ci = ad.add(ad.mul(p_eff, cpos), ad.mul(ad.sub(1.0, p_eff), cneg))
        mixed.append(ci)
        logits_cols.append(logit_i)
        probs_cols.append(prob_i)
        pos_vals.append(cpos.values)
        neg_vals.append(cneg.values)
    bottleneck = ad.concat(mixed)
    logits = _affine(bottleneck, p, "head")
    concept_logits = ad.concat(logits_cols)
    probs = ad.concat(probs_cols)
    record = BottleneckRecord(
        probs=probs.values.copy(),
        concept_logits=concept_logits.values.copy(),
        concept_reprs=[c.values.copy() for c in mixed],
        bottleneck=bottleneck.values.copy(),
        pos_embeddings=pos_vals,
        neg_embeddings=neg_vals,
    )
    return ForwardResult(logits, concept_logits, probs, bottleneck, record)


def _forward_scalar(p, cfg, h, sub, tape, mode) -> ForwardResult:
    concept_logits = _affine(h, p, "conc")  # (batch, k)
    probs = ad.sigmoid(concept_logits)

    if cfg.kind == "bool":
        hard = (probs.values > 0.5).astype(np.float64)
        if cfg.straight_through:
            # Forward value is the hard threshold, backward passes the
            # sigmoid gradient.
            head_in = ad.add(probs, tape.leaf(hard - probs.values))
        else:
            # Thresholding blocks gradients: the task loss reaches only the
            # label predictor, the encoder sees only the concept loss.
            head_in = tape.leaf(hard)
    elif cfg.label_inputs == "logits" and cfg.kind in ("fuzzy", "hybrid"):
        head_in = concept_logits
    else:
        head_in = probs

    head_in = _substitute(head_in, sub, tape)

    extra_vals = None
    if cfg.kind in ("hybrid", "noconcept"):
        extra = ad.leaky_relu(_affine(h, p, "extra"), cfg.leaky_slope)
        extra_vals = extra.values
        bottleneck = ad.concat([head_in, extra])
    else:
        bottleneck = head_in
    logits = _affine(bottleneck, p, "head")

    k = cfg.n_concepts
    if cfg.kind in ("bool", "fuzzy"):
        reprs = [concept_logits.values[:, i : i + 1].copy() for i in range(k)]
    else:
        # Shared unsupervised block plus the concept's own probability slot.
        reprs = [
            np.concatenate([extra_vals, probs.values[:, i : i + 1]], axis=1) for i in range(k)
        ]
    record = BottleneckRecord(
        probs=probs.values.copy(),
        concept_logits=concept_logits.values.copy(),
        concept_reprs=reprs,
        bottleneck=bottleneck.values.copy(),
    )
    return ForwardResult(logits, concept_logits, probs, bottleneck, record)


def evaluate(params: dict, cfg: ArchitectureConfig, x: np.ndarray, sub=None):
    """Eval-mode forward: pure function of (params, x, sub)."""
    tape = Tape()
    res = forward(lift(params, tape), cfg, x, mode="eval", sub=sub)
    return res.logits.values.copy(), res.record


# ---------------------------------------------------------------------------
# Checkpoints (binary container: JSON header + little-endian f64 blocks)

_MAGIC = b"CEMC"
_VERSION = 1


def _cfg_to_dict(cfg: ArchitectureConfig) -> dict:
    return {
        "kind": cfg.kind, "n_features": cfg.n_features, "n_concepts": cfg.n_concepts,
        "n_classes": cfg.n_classes, "emb_size": cfg.emb_size, "hidden": list(cfg.hidden),
        "extra_capacity": cfg.extra_capacity, "leaky_slope": cfg.leaky_slope,
        "label_inputs": cfg.label_inputs, "straight_through": cfg.straight_through,
        "seed": cfg.seed,
    }


def _cfg_from_dict(d: dict) -> ArchitectureConfig:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    return ArchitectureConfig(**d)


class CheckpointError(ValueError):
    pass


def save(params: dict, cfg: ArchitectureConfig, path) -> None:
    names = sorted(params)
    container.write(
        path, _MAGIC, _VERSION, {"config": _cfg_to_dict(cfg)},
        [(n, params[n]) for n in names],
    )


def load(path, expect_kind: str | None = None):
    try:
        header, params = container.read(path, _MAGIC, _VERSION)
        cfg = _cfg_from_dict(header["config"])
    except (container.ContainerError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: invalid checkpoint ({exc})") from exc
    if expect_kind is not None and cfg.kind != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint holds a {cfg.kind!r} model, expected {expect_kind!r}"
        )
    expected = parameter_shapes(cfg)
    if set(params) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the config")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(
                f"{path}: array {name!r} has shape {params[name].shape}, expected {shape}"
            )
    return params, cfg
