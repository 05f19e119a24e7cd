"""Deterministic generators for the XOR, Trigonometric, and Dot benchmarks.

Each generator is a pure function of (n, seed): the same arguments always
produce a bit-identical dataset, on any platform (counter-based RNG
streams). Rows are i.i.d., so the 70/10/20 train/val/test split is
assigned by row index without shuffling.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

DATASET_NAMES = ("xor", "trig", "dot")

# Shorthand per dataset: (n_features, n_concepts, n_classes)
DATASET_SHAPES = {"xor": (2, 2, 2), "trig": (7, 3, 2), "dot": (4, 2, 2)}


@dataclass
class SyntheticDataset:
    name: str
    seed: int
    features: np.ndarray  # (n, d) float64
    concepts: np.ndarray  # (n, k) values in {0, 1}
    labels: np.ndarray  # (n,) class indices
    split: np.ndarray  # (n,) strings in {train, val, test}
    meta: dict = field(default_factory=dict)
    latents: np.ndarray | None = None  # generating latents, kept for debug checks

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_concepts(self) -> int:
        return self.concepts.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0

    def rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def subset(self, split: str):
        idx = self.rows(split)
        return self.features[idx], self.concepts[idx], self.labels[idx]


def _assign_split(n: int) -> np.ndarray:
    n_train = int(0.7 * n)
    n_val = int(0.1 * n)
    split = np.empty(n, dtype="U5")
    split[:n_train] = "train"
    split[n_train : n_train + n_val] = "val"
    split[n_train + n_val :] = "test"
    return split


def _check_n(n: int) -> None:
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")


def gen_xor(n: int = 3000, seed: int = 0) -> SyntheticDataset:
    """Uniform points in the unit square; concepts are per-coordinate
    thresholds at 0.5 (strict); the label is their XOR."""
    _check_n(n)
    rng = stream("data", "xor", seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    c = (x > 0.5).astype(np.float64)
    y = (c[:, 0] != c[:, 1]).astype(np.int64)
    return SyntheticDataset(
        name="xor", seed=seed, features=x, concepts=c, labels=y,
        split=_assign_split(n), meta={"n": n}, latents=x.copy(),
    )


def gen_trig(n: int = 3000, seed: int = 0, latent_scale: str = "variance") -> SyntheticDataset:
    """Three latent normals h_i with variance 2 (or std 2 under
    latent_scale="std"); 7 nonlinear features; concepts are the latent
    signs and the label is the sign of h1 + h2 (strict)."""
    _check_n(n)
    rng = stream("data", "trig", seed)
    sd = np.sqrt(2.0) if latent_scale == "variance" else 2.0
    h = rng.normal(0.0, sd, size=(n, 3))
    x = np.column_stack(
        [np.sin(h) + h, np.cos(h) + h, (h**2).sum(axis=1)]
    )
    c = (h > 0).astype(np.float64)
    y = ((h[:, 0] + h[:, 1]) > 0).astype(np.int64)
    return SyntheticDataset(
        name="trig", seed=seed, features=x, concepts=c, labels=y,
        split=_assign_split(n), meta={"n": n, "latent_scale": latent_scale}, latents=h,
    )


def gen_dot(
    n: int = 3000,
    seed: int = 0,
    latent_scale: str = "variance",
    swap_references: bool = False,
) -> SyntheticDataset:
    """Two latent 2-d vectors v1, v2 ~ N(0, 2I); features are their sum and
    difference; concepts compare each v_i against a fixed reference
    direction and the label is sign(v1 . v2) (strict).

    The references default to (w1, w2) = (w+, w-) with w+ = (1, 1);
    swap_references flips the assignment.
    """
    _check_n(n)
    rng = stream("data", "dot", seed)
    sd = np.sqrt(2.0) if latent_scale == "variance" else 2.0
    v = rng.normal(0.0, sd, size=(n, 2, 2))  # (n, which vector, coord)
    v1, v2 = v[:, 0, :], v[:, 1, :]
    w_plus = np.array([1.0, 1.0])
    w_minus = -w_plus
    w1, w2 = (w_minus, w_plus) if swap_references else (w_plus, w_minus)
    x = np.column_stack([v1 + v2, v1 - v2])
    c = np.column_stack([(v1 @ w1) > 0, (v2 @ w2) > 0]).astype(np.float64)
    y = ((v1 * v2).sum(axis=1) > 0).astype(np.int64)
    return SyntheticDataset(
        name="dot", seed=seed, features=x, concepts=c, labels=y,
        split=_assign_split(n),
        meta={"n": n, "latent_scale": latent_scale, "swap_references": swap_references},
        latents=v.reshape(n, 4),
    )


GENERATORS = {"xor": gen_xor, "trig": gen_trig, "dot": gen_dot}


def generate(name: str, n: int = 3000, seed: int = 0, **kwargs) -> SyntheticDataset:
    if name not in GENERATORS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    return GENERATORS[name](n=n, seed=seed, **kwargs)


def subsample_concepts(ds: SyntheticDataset, fraction: float, seed: int = 0) -> SyntheticDataset:
    """Keep a uniformly-random subset of ceil(fraction * k) concept columns."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"concept fraction must be in (0, 1], got {fraction}")
    k = ds.n_concepts
    keep = int(np.ceil(fraction * k))
    idx = np.sort(stream("subsample", ds.name, ds.seed, seed).choice(k, size=keep, replace=False))
    meta = dict(ds.meta, concept_fraction=fraction, kept_concepts=idx.tolist())
    return SyntheticDataset(
        name=ds.name, seed=ds.seed, features=ds.features, concepts=ds.concepts[:, idx],
        labels=ds.labels, split=ds.split, meta=meta, latents=ds.latents,
    )


# ---------------------------------------------------------------------------
# Columnar text serialization


def to_text(ds: SyntheticDataset) -> str:
    buf = io.StringIO()
    cols = (
        [f"x{i}" for i in range(ds.n_features)]
        + [f"c{i}" for i in range(ds.n_concepts)]
        + ["label", "split"]
    )
    buf.write(",".join(cols) + "\n")
    for i in range(ds.n):
        row = [f"{v:.17g}" for v in ds.features[i]]
        row += [f"{int(v)}" for v in ds.concepts[i]]
        row += [str(int(ds.labels[i])), str(ds.split[i])]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def save_text(ds: SyntheticDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_text(ds))


def load_text(path) -> SyntheticDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = sum(c.startswith("x") for c in header)
        k = sum(c.startswith("c") for c in header)
        feats, concs, labels, split = [], [], [], []
        for line in fh:
            parts = line.strip().split(",")
            feats.append([float(v) for v in parts[:d]])
            concs.append([float(v) for v in parts[d : d + k]])
            labels.append(int(parts[d + k]))
            split.append(parts[d + k + 1])
    return SyntheticDataset(
        name="loaded", seed=-1,
        features=np.array(feats), concepts=np.array(concs),
        labels=np.array(labels, dtype=np.int64), split=np.array(split, dtype="U5"),
    )
