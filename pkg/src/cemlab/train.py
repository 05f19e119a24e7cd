"""Training: joint loss, random training-time substitutions, optimizers,
LR plateau scheduling, early stopping, and the three fitting regimes.

A run is single-threaded and fully deterministic given (init seed, data
seed, train config); batch order, substitution masks, and every update are
drawn from named counter-based streams.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tape
from .data import SyntheticDataset
from .models import ArchitectureConfig
from .rng import stream

REGIMES = ("joint", "sequential", "independent")

# Minimum val-loss decrease that counts as improvement for the plateau
# scheduler and early stopping.
IMPROVEMENT_TOL = 1e-5


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0
    regime: str = "joint"
    optimizer: str = "adam"  # adam | sgd
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 256
    max_epochs: int = 500
    weight_decay: float = 4e-5
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    early_stop_patience: int = 15
    p_int: float = 0.25
    randint: bool = False
    weight_concepts: bool = False  # per-concept positive-class BCE weights
    seed: int = 0
    mi_trace: bool = False
    mi_sample_cap: int = 1000

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patiences must be >= 1")
        if not 0.0 <= self.p_int <= 1.0:
            raise ValueError(f"p_int must be in [0, 1], got {self.p_int}")


@dataclass
class TrainTrace:
    epochs: list = field(default_factory=list)  # dict rows
    stop_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self) -> str:
        cols = [
            "epoch", "train_loss", "val_loss", "val_task_acc", "val_concept_acc",
            "mi_x", "mi_y", "mi_c", "lr", "seconds",
        ]
        lines = [",".join(cols)]
        for row in self.epochs:
            lines.append(",".join(_fmt(row.get(c)) for c in cols))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


# ---------------------------------------------------------------------------
# Optimizers (decoupled weight decay applied at the step)


class SGD:
    def __init__(self, shapes: dict, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {n: np.zeros(s) for n, s in shapes.items()}

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            # L2 penalty folded into the gradient before momentum.
            g = g + self.weight_decay * params[name]
            v = self.velocity[name]
            v *= self.momentum
            v += g
            params[name] -= self.lr * v


class Adam:
    def __init__(
        self, shapes: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
        eps: float = 1e-8, weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros(s) for n, s in shapes.items()}
        self.v = {n: np.zeros(s) for n, s in shapes.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            # L2 penalty folded into the gradient before the moment updates,
            # so the decay is scaled adaptively like the rest of the gradient.
            g = g + self.weight_decay * params[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(tcfg: TrainConfig, params: dict) -> "Adam | SGD":
    shapes = {n: p.shape for n, p in params.items()}
    if tcfg.optimizer == "adam":
        return Adam(shapes, tcfg.lr, weight_decay=tcfg.weight_decay)
    return SGD(shapes, tcfg.lr, momentum=tcfg.momentum, weight_decay=tcfg.weight_decay)


# ---------------------------------------------------------------------------
# Losses and random substitution


def joint_loss(task_logits, concept_logits, y, c, alpha: float, weights=None):
    """Task cross-entropy plus alpha times the (optionally weighted) concept
    binary cross-entropy; both are batch means."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    loss = ad.softmax_cross_entropy(task_logits, y)
    if alpha > 0 and concept_logits is not None:
        loss = ad.add(loss, ad.scale(ad.bce_with_logits(concept_logits, c, weights), alpha))
    return loss


def randint_mask(shape, p_int: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= p_int <= 1.0:
        raise ValueError(f"p_int must be in [0, 1], got {p_int}")
    return (rng.random(shape) < p_int).astype(np.float64)


def randint_mix(probs: np.ndarray, c: np.ndarray, p_int: float, rng: np.random.Generator):
    """Per-(sample, concept) Bernoulli(p_int) substitution of predicted
    probabilities by ground truth. Returns (mixed, mask)."""
    mask = randint_mask(probs.shape, p_int, rng)
    return np.where(mask > 0, c, probs), mask


def concept_class_weights(ds: SyntheticDataset) -> np.ndarray:
    """Positive-class weights (#negatives / #positives) on the train split."""
    _, c, _ = ds.subset("train")
    pos = c.sum(axis=0)
    neg = c.shape[0] - pos
    if (pos == 0).any() or (neg == 0).any():
        raise ValueError("cannot weight a concept with a single observed class")
    return neg / pos


# ---------------------------------------------------------------------------
# Fitting


def _compute_loss(res, y, c, tcfg: TrainConfig, loss_kind: str, weights):
    if loss_kind == "joint":
        cl = res.concept_logits if tcfg.alpha > 0 else None
        return joint_loss(res.logits, cl, y, c, tcfg.alpha, weights)
    if loss_kind == "concept":
        return ad.bce_with_logits(res.concept_logits, c, weights)
    if loss_kind == "task":
        return ad.softmax_cross_entropy(res.logits, y)
    raise ValueError(loss_kind)


def _accuracies(logits: np.ndarray, probs, y, c):
    task_acc = float((logits.argmax(axis=1) == y).mean())
    if probs is None:
        return task_acc, None
    concept_acc = float(((probs > 0.5).astype(np.float64) == c).mean(axis=0).mean())
    return task_acc, concept_acc


def _mi_subsample(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    step = int(np.ceil(n / cap))
    return np.arange(0, n, step)[:cap]


def _fit(
    params: dict,
    cfg: ArchitectureConfig,
    tcfg: TrainConfig,
    ds: SyntheticDataset,
    loss_kind: str = "joint",
    trainable: set | None = None,
    gt_bottleneck: bool = False,
) -> TrainTrace:
    """Train `params` in place; returns the trace. Restores best-epoch
    parameters (minimum recorded val loss) before returning."""
    from . import metrics as _metrics  # local import to avoid a cycle

    x_tr, c_tr, y_tr = ds.subset("train")
    x_val, c_val, y_val = ds.subset("val")
    n_train = x_tr.shape[0]
    weights = concept_class_weights(ds) if tcfg.weight_concepts else None
    use_randint = tcfg.randint and loss_kind in ("joint",) and cfg.kind != "noconcept"

    trainable = set(params) if trainable is None else trainable
    opt_params = {n: params[n] for n in trainable}
    opt = make_optimizer(tcfg, opt_params)
    batch_rng = stream("batches", cfg.kind, tcfg.seed, loss_kind)
    randint_rng = stream("randint", cfg.kind, tcfg.seed)

    trace = TrainTrace()
    best_loss = np.inf
    best_params = None
    best_epoch = 0
    plateau_stale = 0
    stop_stale = 0
    mi_idx = _mi_subsample(n_train, tcfg.mi_sample_cap) if tcfg.mi_trace else None

    for epoch in range(1, tcfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = batch_rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            xb, cb, yb = x_tr[idx], c_tr[idx], y_tr[idx]
            sub = None
            if use_randint and tcfg.p_int > 0:
                mask = randint_mask(cb.shape, tcfg.p_int, randint_rng)
                sub = (mask, cb)
            tape = Tape()
            lifted = models.lift(params, tape)
            if gt_bottleneck:
                res = _forward_gt_bottleneck(lifted, cfg, cb, tape)
            else:
                res = models.forward(lifted, cfg, xb, mode="train", sub=sub)
            loss = _compute_loss(res, yb, cb, tcfg, loss_kind, weights)
            lv = float(loss.values)
            if not np.isfinite(lv):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} ({cfg.kind}, seed {tcfg.seed})"
                )
            tape.backward(loss)
            grads = {n: lifted[n].grad for n in trainable if lifted[n].grad is not None}
            opt.step(params, grads)
            epoch_loss += lv * len(idx)
        epoch_loss /= n_train

        # Validation
        if gt_bottleneck:
            tape = Tape()
            res = _forward_gt_bottleneck(models.lift(params, tape), cfg, c_val, tape)
            val_logits, val_probs = res.logits.values, None
            val_loss = float(_compute_loss(res, y_val, c_val, tcfg, loss_kind, weights).values)
        else:
            tape = Tape()
            res = models.forward(models.lift(params, tape), cfg, x_val, mode="eval")
            val_logits, val_probs = res.logits.values, res.probs.values
            val_loss = float(_compute_loss(res, y_val, c_val, tcfg, loss_kind, weights).values)
        task_acc, concept_acc = _accuracies(val_logits, val_probs, y_val, c_val)

        row = {
            "epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss,
            "val_task_acc": task_acc, "val_concept_acc": concept_acc,
            "mi_x": None, "mi_y": None, "mi_c": None, "lr": opt.lr,
        }
        if mi_idx is not None:
            _, rec = models.evaluate(params, cfg, x_tr[mi_idx])
            acts = rec.bottleneck
            mcfg = _metrics.MIEstimatorConfig(dim=acts.shape[1], sample_cap=tcfg.mi_sample_cap)
            row["mi_x"] = _metrics.kde_mi(acts, target="input", cfg=mcfg)
            row["mi_y"] = _metrics.kde_mi(acts, target="labels", labels=y_tr[mi_idx], cfg=mcfg)
            row["mi_c"] = _metrics.kde_mi(acts, target="concepts", labels=c_tr[mi_idx], cfg=mcfg)
        row["seconds"] = time.perf_counter() - t0
        trace.epochs.append(row)

        if val_loss < best_loss - IMPROVEMENT_TOL:
            best_loss = val_loss
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            plateau_stale = 0
            stop_stale = 0
        else:
            plateau_stale += 1
            stop_stale += 1
            if plateau_stale >= tcfg.plateau_patience:
                opt.lr *= tcfg.plateau_factor
                plateau_stale = 0
            if stop_stale >= tcfg.early_stop_patience:
                break

    trace.stop_epoch = len(trace.epochs)
    trace.best_epoch = best_epoch if best_epoch else len(trace.epochs)
    if best_params is not None:
        for name in params:
            params[name][...] = best_params[name]
    return trace


def _forward_gt_bottleneck(lifted, cfg: ArchitectureConfig, c: np.ndarray, tape: Tape):
    """Label predictor over ground-truth concept bottlenecks (independent
    regime). For hybrid models the unsupervised block is left at zero."""
    width = cfg.bottleneck_width
    b = np.zeros((c.shape[0], width))
    b[:, : cfg.n_concepts] = c
    bottleneck = tape.leaf(b)
    logits = ad.add(ad.matmul(bottleneck, lifted["head_W"]), lifted["head_b"])
    record = models.BottleneckRecord(
        probs=c.copy(), concept_logits=c.copy(),
        concept_reprs=[c[:, i : i + 1].copy() for i in range(cfg.n_concepts)],
        bottleneck=b,
    )
    return models.ForwardResult(logits, None, None, bottleneck, record)


def _head_names(params: dict) -> set:
    return {n for n in params if n.startswith("head_")}


def train(
    params: dict, cfg: ArchitectureConfig, tcfg: TrainConfig, ds: SyntheticDataset
) -> tuple[dict, TrainTrace]:
    """Fit per the configured regime and return (best params, trace).

    joint: end-to-end on the weighted task+concept loss.
    sequential: concept loss first, then the label head over predicted
    bottlenecks with everything else frozen.
    independent: concept loss first, then the label head over ground-truth
    concept bottlenecks (rejected for the embedding model, whose bottleneck
    has no ground-truth realization).
    """
    if ds.rows("train").size == 0 or ds.rows("val").size == 0:
        raise ValueError("dataset must provide train and val splits")
    if cfg.kind == "noconcept" and tcfg.alpha != 0:
        raise ValueError("the no-concept baseline must be trained with alpha = 0")
    if tcfg.regime == "joint":
        trace = _fit(params, cfg, tcfg, ds, loss_kind="joint")
        return params, trace
    if cfg.kind == "noconcept":
        raise ValueError("sequential/independent regimes need concept supervision")
    if tcfg.regime == "independent" and cfg.kind == "cem":
        raise ValueError("independent regime is inapplicable to the embedding model")
    _fit(params, cfg, tcfg, ds, loss_kind="concept")
    head = _head_names(params)
    if tcfg.regime == "sequential":
        trace = _fit(params, cfg, tcfg, ds, loss_kind="task", trainable=head)
    else:
        trace = _fit(params, cfg, tcfg, ds, loss_kind="task", trainable=head, gt_bottleneck=True)
    return params, trace
