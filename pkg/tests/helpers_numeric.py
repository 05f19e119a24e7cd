"""Shared numerical oracles used by the unit and acceptance tests.

Everything here is implemented independently of the library internals
(plain loops, collections.Counter, itertools) so the tests compare two
separate derivations of the same quantity.
"""

from __future__ import annotations

import itertools
from collections import Counter

import numpy as np

from cemlab import autodiff as ad
from cemlab.autodiff import Tape


# ---------------------------------------------------------------------------
# Random composite graphs for gradient checking


def build_graph(seed: int, overrides: dict | None = None):
    """Deterministically build a random composite scalar-valued graph.

    Returns (loss, leaves). When `overrides` maps leaf index -> array, the
    sampled leaf values are replaced (sampling order is unchanged, so the
    graph topology is identical); this is what makes central-difference
    probing possible.
    """
    rng = np.random.default_rng(seed)
    tape = Tape()
    leaves = []

    def new_leaf(shape):
        vals = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        if overrides is not None and len(leaves) in overrides:
            vals = overrides[len(leaves)]
        leaf = tape.leaf(vals)
        leaves.append(leaf)
        return leaf

    batch = int(rng.integers(2, 5))
    feat = int(rng.integers(2, 6))
    nodes = [new_leaf((batch, feat))]
    for _ in range(int(rng.integers(3, 8))):
        op = rng.choice(["matmul", "add", "sub", "mul", "scale", "nonlin", "concat"])
        a = nodes[int(rng.integers(len(nodes)))]
        if op == "matmul":
            w = new_leaf((a.shape[1], int(rng.integers(2, 6))))
            nodes.append(ad.matmul(a, w))
        elif op in ("add", "sub", "mul"):
            shape = a.shape if rng.random() < 0.5 else (1, a.shape[1])
            other = new_leaf(shape)
            nodes.append(getattr(ad, op)(a, other))
        elif op == "scale":
            nodes.append(ad.scale(a, float(rng.uniform(0.5, 2.0)) * (1 if rng.random() < 0.5 else -1)))
        elif op == "nonlin":
            # The leaky-ReLU kink breaks central differences; only apply it
            # when every pre-activation is safely away from zero.
            if np.abs(a.values).min() > 1e-3:
                nodes.append(ad.leaky_relu(a))
            else:
                nodes.append(ad.sigmoid(a))
        elif op == "concat":
            b = nodes[int(rng.integers(len(nodes)))]
            if b.shape[0] == a.shape[0]:
                nodes.append(ad.concat([a, b]))
    out = nodes[-1]

    head = int(rng.integers(4))
    if head == 0:
        loss = ad.amean(out)
    elif head == 1:
        loss = ad.asum(ad.sigmoid(out))
    elif head == 2 and out.shape[1] >= 2:
        labels = rng.integers(0, out.shape[1], size=out.shape[0])
        loss = ad.softmax_cross_entropy(out, labels)
    else:
        targets = rng.integers(0, 2, size=out.shape).astype(np.float64)
        loss = ad.bce_with_logits(out, targets)
    return loss, leaves, tape


def gradcheck(seed: int, eps: float = 1e-6, tol: float = 1e-4) -> float:
    """Max elementwise relative error between backprop and central
    differences over one random graph."""
    loss, leaves, tape = build_graph(seed)
    tape.backward(loss)
    base_values = [leaf.values.copy() for leaf in leaves]
    worst = 0.0
    for li, leaf in enumerate(leaves):
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.values)
        fd = np.zeros_like(base_values[li])
        for idx in np.ndindex(*base_values[li].shape):
            for sign, store in ((+1, "hi"), (-1, "lo")):
                vals = base_values[li].copy()
                vals[idx] += sign * eps
                loss_p, _, _ = build_graph(seed, overrides={li: vals})
                if sign > 0:
                    hi = float(loss_p.values)
                else:
                    lo = float(loss_p.values)
            fd[idx] = (hi - lo) / (2 * eps)
        err = np.abs(grad - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(err.max()))
    return worst


# ---------------------------------------------------------------------------
# Homogeneity by direct arithmetic


def homogeneity_direct(labels, clusters) -> float:
    """1 - H(C|Pi)/H(C) computed with plain Counter loops in nats."""
    n = len(labels)
    label_counts = Counter(labels)
    h_c = 0.0
    for cnt in label_counts.values():
        p = cnt / n
        h_c -= p * np.log(p)
    if h_c == 0.0:
        return 1.0
    pair_counts = Counter(zip(clusters, labels))
    cluster_counts = Counter(clusters)
    h_cond = 0.0
    for (cl, _), cnt in pair_counts.items():
        h_cond -= (cnt / n) * np.log(cnt / cluster_counts[cl])
    if h_cond <= 0.0:
        return 1.0
    return 1.0 - h_cond / h_c


# ---------------------------------------------------------------------------
# Exhaustive k-medoids


def kmedoids_bruteforce_cost(points: np.ndarray, rho: int) -> float:
    """Optimal assignment cost over all medoid subsets (N <= 12)."""
    n = points.shape[0]
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    best = np.inf
    for medoids in itertools.combinations(range(n), rho):
        cost = dist[:, list(medoids)].min(axis=1).sum()
        best = min(best, float(cost))
    return best


def assignment_cost(points: np.ndarray, assign: np.ndarray) -> float:
    """Cost of an assignment: per cluster, the best in-cluster medoid."""
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    total = 0.0
    for cl in np.unique(assign):
        members = np.flatnonzero(assign == cl)
        intra = dist[np.ix_(members, members)].sum(axis=0)
        total += float(intra.min())
    return total
