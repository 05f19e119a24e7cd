"""Evaluation metrics: accuracies, concept alignment (k-medoids +
homogeneity sweep), pairwise-KDE mutual information, and linear probes.

All functions here are pure given their seeds. Entropies are computed in
nats internally; unit conversion happens at the boundary.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb as _comb

import numpy as np

LN2 = float(np.log(2.0))


# ---------------------------------------------------------------------------
# Accuracy


def accuracy_metrics(logits: np.ndarray, probs, y: np.ndarray, c) -> tuple[float, float | None]:
    """Task accuracy (argmax, ties to the lowest class index) and mean
    per-concept accuracy at threshold 0.5."""
    if logits.shape[0] != y.shape[0]:
        raise ValueError(f"logits rows {logits.shape[0]} != labels {y.shape[0]}")
    task_acc = float((logits.argmax(axis=1) == y).mean())
    if probs is None:
        return task_acc, None
    preds = (probs > 0.5).astype(np.float64)
    concept_acc = float((preds == c).mean(axis=0).mean())
    return task_acc, concept_acc


# ---------------------------------------------------------------------------
# k-medoids


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = (points**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _central_init(dist: np.ndarray, rho: int) -> np.ndarray:
    """The rho most central points (smallest total distance to all others);
    ties break toward the lowest index via the stable sort."""
    order = np.argsort(dist.sum(axis=0), kind="stable")
    return np.sort(order[:rho])


def _assignment_cost(dist: np.ndarray, medoids: np.ndarray) -> float:
    return float(dist[:, medoids].min(axis=1).sum())


#: Maximum medoid combinations enumerated before falling back to the
#: alternating/swap heuristic.
_EXACT_BUDGET = 20000


def kmedoids_from_distances(
    dist: np.ndarray, rho: int, seed: int = 0, max_iter: int = 100
) -> np.ndarray:
    """Alternating k-medoids from the deterministic most-central-points
    init; ties break toward the lowest index. Instances small enough to
    enumerate are solved exactly. The seed is accepted for interface
    stability; the procedure is fully deterministic."""
    n = dist.shape[0]
    if not 2 <= rho <= n:
        raise ValueError(f"cluster count must be in [2, {n}], got {rho}")
    if _comb(n, rho) <= _EXACT_BUDGET:
        # Small instances admit exact enumeration; the alternation below
        # only guarantees a local optimum.
        best_cost, best = np.inf, None
        for medoids in itertools.combinations(range(n), rho):
            cost = _assignment_cost(dist, np.array(medoids))
            if cost < best_cost - 1e-12:
                best_cost, best = cost, medoids
        return np.argmin(dist[:, np.array(best)], axis=1)
    medoids = _central_init(dist, rho)
    for _ in range(max_iter):
        assign = np.argmin(dist[:, medoids], axis=1)
        kept = []
        for j in range(rho):
            members = np.flatnonzero(assign == j)
            if members.size == 0:
                # Empty cluster (only possible with duplicate points, since a
                # medoid is always its own nearest); drop it and re-seed below.
                continue
            intra = dist[np.ix_(members, members)].sum(axis=0)
            kept.append(int(members[int(np.argmin(intra))]))
        new_medoids = np.array(sorted(set(kept)))
        if new_medoids.size < rho:
            # Collisions or empty clusters: re-seed from the farthest points.
            nearest = dist[:, new_medoids].min(axis=1)
            extras = []
            while new_medoids.size + len(extras) < rho:
                if nearest.max() > 0.0:
                    cand = int(np.argmax(nearest))
                else:
                    # Fewer distinct locations than rho: fill with the
                    # lowest-index points not yet chosen.
                    used = set(new_medoids.tolist()) | set(extras)
                    cand = min(i for i in range(n) if i not in used)
                extras.append(cand)
                np.minimum(nearest, dist[cand], out=nearest)
            new_medoids = np.array(sorted(set(new_medoids.tolist() + extras)))
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids
    return np.argmin(dist[:, medoids], axis=1)


def kmedoids(points: np.ndarray, rho: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Cluster rows of `points` into rho clusters; returns assignments in
    {0, ..., rho-1} ordered by medoid index."""
    return kmedoids_from_distances(pairwise_distances(points), rho, seed, max_iter)


# ---------------------------------------------------------------------------
# Homogeneity and the concept alignment score


def homogeneity(labels: np.ndarray, clusters: np.ndarray) -> float:
    """1 - H(C|Pi)/H(C) from empirical frequencies; 1 when H(C) or H(C|Pi)
    is zero. Invariant under relabeling of cluster ids."""
    labels = np.asarray(labels)
    clusters = np.asarray(clusters)
    if labels.shape != clusters.shape or labels.ndim != 1 or labels.size == 0:
        raise ValueError(f"label/cluster shape mismatch: {labels.shape} vs {clusters.shape}")
    n = labels.size
    _, label_idx = np.unique(labels, return_inverse=True)
    _, cluster_idx = np.unique(clusters, return_inverse=True)
    n_labels = label_idx.max() + 1
    n_clusters = cluster_idx.max() + 1
    table = np.zeros((n_clusters, n_labels))
    np.add.at(table, (cluster_idx, label_idx), 1.0)

    label_counts = table.sum(axis=0)
    p = label_counts[label_counts > 0] / n
    h_c = float(-(p * np.log(p)).sum())
    if h_c == 0.0:
        return 1.0

    cluster_totals = table.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(table > 0, table / cluster_totals, 1.0)
        h_cond = float(-((table / n) * np.log(frac)).sum())
    if h_cond <= 0.0:
        return 1.0
    return 1.0 - h_cond / h_c


@dataclass
class ConceptRepresentationSet:
    """Per-concept representations to cluster, with their binary labels."""

    reps: list  # k arrays of shape (N, r_i)
    labels: np.ndarray  # (N, k) in {0, 1}
    provenance: str = ""

    def __post_init__(self):
        if len(self.reps) != self.labels.shape[1]:
            raise ValueError("one representation block per concept required")
        for r in self.reps:
            if r.shape[0] != self.labels.shape[0]:
                raise ValueError("all concepts must share the sample count N")
            if r.ndim != 2 or r.shape[1] < 1:
                raise ValueError("representations must be (N, r_i) with r_i >= 1")

    @property
    def n(self) -> int:
        return self.labels.shape[0]


def cas(reps: ConceptRepresentationSet, delta: int = 50, seed: int = 0) -> float:
    """Mean homogeneity over cluster counts {2, 2+delta, ...} and concepts."""
    n = reps.n
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    if delta < 1:
        raise ValueError(f"stride must be >= 1, got {delta}")
    rhos = list(range(2, n + 1, delta))
    scores = []
    for i, block in enumerate(reps.reps):
        dist = pairwise_distances(block)
        labels = reps.labels[:, i]
        for rho in rhos:
            assign = kmedoids_from_distances(dist, rho, seed=seed)
            scores.append(homogeneity(labels, assign))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Pairwise-KDE mutual information


@dataclass
class MIEstimatorConfig:
    dim: int  # representation width zeta
    noise_var: float | None = None  # defaults to dim / 100
    sample_cap: int = 1000
    unit: str = "nats"

    def __post_init__(self):
        if self.noise_var is None:
            self.noise_var = self.dim / 100.0
        if self.noise_var <= 0:
            raise ValueError(f"noise variance must be > 0, got {self.noise_var}")
        if self.unit not in ("nats", "bits"):
            raise ValueError(f"unit must be nats or bits, got {self.unit!r}")


#: Number of negative MI estimates clamped to zero since import.
clamp_count = 0


def _sq_distances(acts: np.ndarray) -> np.ndarray:
    sq = (acts**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (acts @ acts.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _entropy_bound(d2: np.ndarray, dim: int, noise_var: float) -> float:
    """zeta/2 - mean_i log((1/n) sum_j exp(-d2_ij / (2 sigma^2)))."""
    n = d2.shape[0]
    expo = -d2 / (2.0 * noise_var)
    row_max = expo.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(expo - row_max).sum(axis=1))
    return dim / 2.0 - float((lse - np.log(n)).mean())


def _subsample(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    step = int(np.ceil(n / cap))
    return np.arange(0, n, step)[:cap]


def kde_mi(
    acts: np.ndarray,
    target: str = "input",
    labels: np.ndarray | None = None,
    cfg: MIEstimatorConfig | None = None,
    seed: int = 0,
) -> float:
    """Upper-bound MI between noisy bottleneck activations and the chosen
    target: "input" (unconditional entropy bound), "labels" (task-label
    partition), or "concepts" (average over per-concept binary partitions).
    Negative results are clamped to zero.
    """
    global clamp_count
    acts = np.asarray(acts, dtype=np.float64)
    if acts.ndim != 2 or acts.shape[0] < 2:
        raise ValueError(f"need a (n >= 2, zeta) activation matrix, got {acts.shape}")
    if cfg is None:
        cfg = MIEstimatorConfig(dim=acts.shape[1])
    if cfg.dim != acts.shape[1]:
        raise ValueError(f"config dim {cfg.dim} != activation width {acts.shape[1]}")

    idx = _subsample(acts.shape[0], cfg.sample_cap)
    acts = acts[idx]
    if labels is not None:
        labels = np.asarray(labels)[idx]
    n = acts.shape[0]
    d2 = _sq_distances(acts)
    h = _entropy_bound(d2, cfg.dim, cfg.noise_var)

    if target == "input":
        mi = h
    elif target == "labels":
        if labels is None or labels.shape != (n,):
            raise ValueError("labels target needs a label vector matching the rows")
        mi = h - _conditional_entropy(d2, labels, cfg)
    elif target == "concepts":
        if labels is None or labels.ndim != 2 or labels.shape[0] != n:
            raise ValueError("concepts target needs an (n, k) concept matrix")
        k = labels.shape[1]
        cond = np.mean([_conditional_entropy(d2, labels[:, a], cfg) for a in range(k)])
        mi = h - float(cond)
    else:
        raise ValueError(f"unknown target {target!r}")

    if mi < 0:
        clamp_count += 1
        mi = 0.0
    return mi / LN2 if cfg.unit == "bits" else mi


def _conditional_entropy(d2: np.ndarray, labels: np.ndarray, cfg: MIEstimatorConfig) -> float:
    n = d2.shape[0]
    values, counts = np.unique(labels, return_counts=True)
    if values.size == 0:
        raise ValueError("empty label partition")
    total = 0.0
    for v, cnt in zip(values, counts):
        members = np.flatnonzero(labels == v)
        total += (cnt / n) * _entropy_bound(
            d2[np.ix_(members, members)], cfg.dim, cfg.noise_var
        )
    return total


# ---------------------------------------------------------------------------
# Linear probes


@dataclass
class ProbeResult:
    accuracies: np.ndarray  # (k',)
    degenerate: np.ndarray  # (k',) bool: single-class target, majority rate reported


def linear_probe(
    bottlenecks: np.ndarray,
    targets: np.ndarray,
    train_rows: np.ndarray,
    test_rows: np.ndarray,
    lr: float = 1e-2,
    epochs: int = 3000,
) -> ProbeResult:
    """One logistic-regression probe per binary target over frozen
    bottlenecks, trained full-batch with default Adam."""
    from . import autodiff as ad
    from .autodiff import Tape
    from .train import Adam

    x_tr = bottlenecks[train_rows]
    x_te = bottlenecks[test_rows]
    n_targets = targets.shape[1]
    accs = np.zeros(n_targets)
    degenerate = np.zeros(n_targets, dtype=bool)
    # Standardize for conditioning; pure function of the train split.
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    x_tr = (x_tr - mu) / sd
    x_te = (x_te - mu) / sd

    for j in range(n_targets):
        t_tr = targets[train_rows, j].astype(np.float64)
        t_te = targets[test_rows, j].astype(np.float64)
        if t_tr.min() == t_tr.max():
            degenerate[j] = True
            majority = t_tr[0]
            accs[j] = float((t_te == majority).mean())
            continue
        params = {"W": np.zeros((x_tr.shape[1], 1)), "b": np.zeros((1, 1))}
        opt = Adam({n: p.shape for n, p in params.items()}, lr)
        # Fixed step-down schedule: Adam oscillates at a constant step size,
        # so anneal to let the probe settle on the separator.
        decay_at = {int(0.6 * epochs), int(0.8 * epochs)}
        for step in range(epochs):
            if step in decay_at:
                opt.lr *= 0.1
            tape = Tape()
            w, b = tape.leaf(params["W"]), tape.leaf(params["b"])
            z = ad.add(ad.matmul(tape.leaf(x_tr), w), b)
            loss = ad.bce_with_logits(z, t_tr[:, None])
            tape.backward(loss)
            opt.step(params, {"W": w.grad, "b": b.grad})
        z_te = x_te @ params["W"] + params["b"]
        accs[j] = float(((z_te[:, 0] > 0) == (t_te > 0.5)).mean())
    return ProbeResult(accuracies=accs, degenerate=degenerate)
