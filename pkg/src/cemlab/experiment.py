"""Experiment orchestration: config parsing, multi-seed runs, metric
aggregation, activation dumps, intervention curves, and probes.

A config fully determines the outputs: per-run metric rows (results.csv),
per-model aggregates (summary.csv), and optional curves.csv / probe.csv.
Wall-clock timings go to a separate timings.csv so the result files are
byte-identical across reruns.
"""

from __future__ import annotations

import concurrent.futures
import configparser
import dataclasses
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass, field

import numpy as np

from . import container, data, metrics, models, train
from .intervene import POLICIES, intervention_curve

RESULT_COLUMNS = (
    "model", "seed", "task_acc", "concept_acc", "cas", "mi_x_final", "mi_y_final", "epochs"
)
SCHEMA_VERSION = 1

_DUMP_MAGIC = b"CEMA"
_DUMP_VERSION = 1


@dataclass
class ModelSpec:
    name: str
    kind: str
    emb_size: int = 128
    hidden: tuple = (128, 128)
    extra_capacity: int | None = None
    label_inputs: str = "probs"
    alpha: float = 1.0
    regime: str = "joint"
    optimizer: str = "adam"
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 256
    max_epochs: int = 500
    weight_decay: float = 4e-5
    randint: bool = False
    p_int: float = 0.25
    weight_concepts: bool = False
    mi_trace: bool | None = None  # None: inherit the experiment toggle


@dataclass
class DatasetSpec:
    name: str
    n: int = 3000
    seed: int = 0
    concept_fraction: float = 1.0
    latent_scale: str = "variance"


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    model_specs: list
    seeds: tuple = (0, 1, 2, 3, 4)
    cas: bool = True
    cas_delta: int = 50
    mi_trace: bool = False
    mi_sample_cap: int = 1000
    interventions: bool = False
    probe: bool = False
    dump_activations: bool = False
    assertions: list = field(default_factory=list)  # (label, model, metric, stat, op, value)

    def __post_init__(self):
        if not self.model_specs:
            raise ValueError("config must define at least one model")
        if not self.seeds:
            raise ValueError("config must define at least one seed")
        names = [m.name for m in self.model_specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate model names: {names}")


class ConfigError(ValueError):
    pass


_ASSERT_RE = re.compile(
    r"^\s*([\w-]+)\.(\w+)\.(mean|min|max)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*$"
)


def parse_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    try:
        dsec = cp["dataset"]
        dataset = DatasetSpec(
            name=dsec.get("name"),
            n=dsec.getint("n", 3000),
            seed=dsec.getint("seed", 0),
            concept_fraction=dsec.getfloat("concept_fraction", 1.0),
            latent_scale=dsec.get("latent_scale", "variance"),
        )
        if dataset.name not in data.DATASET_NAMES:
            raise ConfigError(f"dataset.name must be one of {data.DATASET_NAMES}, got {dataset.name!r}")
        esec = cp["experiment"] if cp.has_section("experiment") else {}
        seeds = tuple(
            int(s) for s in re.split(r"[,\s]+", esec.get("seeds", "0,1,2,3,4").strip()) if s
        )
        model_specs = []
        for section in cp.sections():
            if not section.startswith("model:"):
                continue
            msec = cp[section]
            name = section.split(":", 1)[1]
            kind = msec.get("kind", name)
            if kind not in models.MODEL_KINDS:
                raise ConfigError(f"[{section}] kind must be one of {models.MODEL_KINDS}, got {kind!r}")
            hidden = tuple(
                int(w) for w in re.split(r"[,\s]+", msec.get("hidden", "128,128").strip()) if w
            )
            spec = ModelSpec(
                name=name, kind=kind,
                emb_size=msec.getint("emb_size", 128),
                hidden=hidden,
                extra_capacity=msec.getint("extra_capacity", fallback=None),
                label_inputs=msec.get("label_inputs", "probs"),
                alpha=msec.getfloat("alpha", 0.0 if kind == "noconcept" else 1.0),
                regime=msec.get("regime", "joint"),
                optimizer=msec.get("optimizer", "adam"),
                lr=msec.getfloat("lr", 1e-2),
                momentum=msec.getfloat("momentum", 0.9),
                batch_size=msec.getint("batch_size", 256),
                max_epochs=msec.getint("max_epochs", 500),
                weight_decay=msec.getfloat("weight_decay", 4e-5),
                randint=msec.getboolean("randint", kind == "cem"),
                p_int=msec.getfloat("p_int", 0.25),
                weight_concepts=msec.getboolean("weight_concepts", False),
                mi_trace=msec.getboolean("mi_trace", fallback=None),
            )
            model_specs.append(spec)
        assertions = []
        if cp.has_section("assert"):
            for label, expr in cp["assert"].items():
                m = _ASSERT_RE.match(expr)
                if not m:
                    raise ConfigError(
                        f"[assert] {label}: expected 'model.metric.stat OP value', got {expr!r}"
                    )
                assertions.append((label, m.group(1), m.group(2), m.group(3), m.group(4), float(m.group(5))))
        esec_get = esec.getboolean if hasattr(esec, "getboolean") else lambda k, d: d
        cfg = ExperimentConfig(
            dataset=dataset,
            model_specs=model_specs,
            seeds=seeds,
            cas=esec_get("cas", True),
            cas_delta=int(esec.get("cas_delta", 50)) if esec else 50,
            mi_trace=esec_get("mi_trace", False),
            mi_sample_cap=int(esec.get("mi_sample_cap", 1000)) if esec else 1000,
            interventions=esec_get("interventions", False),
            probe=esec_get("probe", False),
            dump_activations=esec_get("dump_activations", False),
            assertions=assertions,
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# Aggregation

# Two-sided 97.5% Student-t quantiles for 1..30 degrees of freedom.
_T_TABLE = (
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
)


def t_quantile(df: int) -> float:
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    return _T_TABLE[df - 1] if df <= 30 else 1.96


def aggregate_ci(values) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% CI (Student-t half-width)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError(f"need at least 2 values, got {n}")
    mean = float(values.mean())
    half = t_quantile(n - 1) * float(values.std(ddof=1)) / np.sqrt(n)
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# Single run


def _dataset_seed(base: int, run_seed: int, seed_offset: int) -> int:
    # Distinct stream per (dataset seed, run seed); independent of model init.
    return base * 100003 + run_seed + seed_offset


def build_dataset(dspec: DatasetSpec, run_seed: int, seed_offset: int = 0) -> data.SyntheticDataset:
    kwargs = {}
    if dspec.name in ("trig", "dot"):
        kwargs["latent_scale"] = dspec.latent_scale
    ds = data.generate(dspec.name, n=dspec.n, seed=_dataset_seed(dspec.seed, run_seed, seed_offset), **kwargs)
    if dspec.concept_fraction < 1.0:
        ds = data.subsample_concepts(ds, dspec.concept_fraction, seed=run_seed)
    return ds


def _arch_config(spec: ModelSpec, ds: data.SyntheticDataset, run_seed: int) -> models.ArchitectureConfig:
    return models.ArchitectureConfig(
        kind=spec.kind,
        n_features=ds.n_features,
        n_concepts=ds.n_concepts,
        n_classes=ds.n_classes,
        emb_size=spec.emb_size,
        hidden=spec.hidden,
        extra_capacity=spec.extra_capacity,
        label_inputs=spec.label_inputs,
        seed=run_seed,
    )


def _train_config(spec: ModelSpec, exp: ExperimentConfig, run_seed: int) -> train.TrainConfig:
    mi = exp.mi_trace if spec.mi_trace is None else spec.mi_trace
    return train.TrainConfig(
        alpha=spec.alpha, regime=spec.regime, optimizer=spec.optimizer, lr=spec.lr,
        momentum=spec.momentum, batch_size=spec.batch_size, max_epochs=spec.max_epochs,
        weight_decay=spec.weight_decay, randint=spec.randint, p_int=spec.p_int,
        weight_concepts=spec.weight_concepts, seed=run_seed,
        mi_trace=mi, mi_sample_cap=exp.mi_sample_cap,
    )


def run_single(exp: ExperimentConfig, spec: ModelSpec, run_seed: int, out_dir: str,
               seed_offset: int = 0) -> dict:
    """Train and evaluate one (model, seed) cell; writes its trace,
    checkpoint, and optional activation dump under out_dir."""
    t0 = time.perf_counter()
    ds = build_dataset(exp.dataset, run_seed, seed_offset)
    cfg = _arch_config(spec, ds, run_seed + seed_offset)
    tcfg = _train_config(spec, exp, run_seed + seed_offset)
    params = models.init(cfg)
    params, trace = train.train(params, cfg, tcfg, ds)

    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
    ckpt = os.path.join(out_dir, "checkpoints", f"{spec.name}_{run_seed}.ckpt")
    models.save(params, cfg, ckpt)
    _atomic_write(os.path.join(out_dir, "traces", f"{spec.name}_{run_seed}.csv"), trace.to_csv())

    x_te, c_te, y_te = ds.subset("test")
    logits, record = models.evaluate(params, cfg, x_te)
    task_acc, concept_acc = metrics.accuracy_metrics(logits, record.probs, y_te, c_te)

    cas_value = None
    if exp.cas:
        reps = metrics.ConceptRepresentationSet(
            reps=record.concept_reprs, labels=c_te, provenance=spec.kind
        )
        cas_value = metrics.cas(reps, delta=exp.cas_delta, seed=run_seed)

    if exp.dump_activations:
        os.makedirs(os.path.join(out_dir, "dumps"), exist_ok=True)
        dump_activations(
            record, c_te, y_te, cfg,
            os.path.join(out_dir, "dumps", f"{spec.name}_{run_seed}.acts"),
        )

    mi_x = mi_y = None
    if trace.epochs and trace.epochs[-1]["mi_x"] is not None:
        mi_x = trace.epochs[-1]["mi_x"]
        mi_y = trace.epochs[-1]["mi_y"]

    probe_rows = []
    if exp.probe:
        full = data.generate(
            exp.dataset.name, n=exp.dataset.n,
            seed=_dataset_seed(exp.dataset.seed, run_seed, seed_offset),
            **({"latent_scale": exp.dataset.latent_scale} if exp.dataset.name in ("trig", "dot") else {}),
        )
        _, rec_all = models.evaluate(params, cfg, ds.features)
        result = metrics.linear_probe(
            rec_all.bottleneck, full.concepts, ds.rows("train"), ds.rows("test")
        )
        for j in range(full.concepts.shape[1]):
            probe_rows.append({
                "model": spec.name, "seed": run_seed, "target": f"c{j}",
                "accuracy": result.accuracies[j], "degenerate": int(result.degenerate[j]),
            })

    return {
        "model": spec.name, "seed": run_seed, "task_acc": task_acc,
        "concept_acc": concept_acc, "cas": cas_value,
        "mi_x_final": mi_x, "mi_y_final": mi_y,
        "epochs": trace.stop_epoch, "seconds": time.perf_counter() - t0,
        "checkpoint": ckpt, "probe_rows": probe_rows, "failed": False, "error": "",
    }


def _run_job(args) -> dict:
    exp, spec, run_seed, out_dir, seed_offset = args
    try:
        return run_single(exp, spec, run_seed, out_dir, seed_offset)
    except train.TrainingDiverged as exc:
        return {
            "model": spec.name, "seed": run_seed, "task_acc": None, "concept_acc": None,
            "cas": None, "mi_x_final": None, "mi_y_final": None, "epochs": 0,
            "seconds": 0.0, "checkpoint": "", "probe_rows": [], "failed": True,
            "error": str(exc),
        }


# ---------------------------------------------------------------------------
# Full experiment


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in columns))
    _atomic_write(path, "\n".join(lines) + "\n")


def config_hash(exp: ExperimentConfig, seed_offset: int = 0) -> str:
    """Provenance digest over everything that determines the outputs."""
    payload = {"config": dataclasses.asdict(exp), "seed_offset": seed_offset}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def run_experiment(exp: ExperimentConfig, out_dir: str, jobs: int = 1, seed_offset: int = 0) -> int:
    """Execute every (model, seed) cell, write outputs, return exit status
    (0 iff all runs completed and all configured assertions passed)."""
    os.makedirs(out_dir, exist_ok=True)
    tasks = [
        (exp, spec, run_seed, out_dir, seed_offset)
        for spec in exp.model_specs
        for run_seed in exp.seeds
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    results.sort(key=lambda r: ([m.name for m in exp.model_specs].index(r["model"]), r["seed"]))

    _write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS, results)
    _atomic_write(
        os.path.join(out_dir, "meta.json"),
        json.dumps(
            {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(exp, seed_offset)},
            indent=1, sort_keys=True,
        ) + "\n",
    )
    _write_csv(
        os.path.join(out_dir, "timings.csv"),
        ("model", "seed", "seconds", "error"),
        [{**r, "error": r["error"]} for r in results],
    )

    summary = summarize(exp, results)
    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        ("model", "metric", "mean", "ci_low", "ci_high", "n"),
        summary,
    )

    if exp.probe:
        probe_rows = [row for r in results for row in r["probe_rows"]]
        _write_csv(
            os.path.join(out_dir, "probe.csv"),
            ("model", "seed", "target", "accuracy", "degenerate"),
            probe_rows,
        )

    if exp.interventions:
        curve_rows = compute_curves(exp, out_dir, results, seed_offset)
        _write_csv(
            os.path.join(out_dir, "curves.csv"),
            ("model", "policy", "d", "acc_mean", "ci_low", "ci_high", "seed_count"),
            curve_rows,
        )

    status = 0 if all(not r["failed"] for r in results) else 1
    assert_lines = []
    for label, model, metric, stat, op, value in exp.assertions:
        ok, observed = _check_assertion(summary, model, metric, stat, op, value)
        assert_lines.append(
            f"{'PASS' if ok else 'FAIL'} {label}: {model}.{metric}.{stat} {op} {value} "
            f"(observed {_fmt(observed)})"
        )
        if not ok:
            status = 1
    if assert_lines:
        _atomic_write(os.path.join(out_dir, "assertions.txt"), "\n".join(assert_lines) + "\n")
    return status


def summarize(exp: ExperimentConfig, results: list) -> list:
    rows = []
    for spec in exp.model_specs:
        cells = [r for r in results if r["model"] == spec.name and not r["failed"]]
        for metric in ("task_acc", "concept_acc", "cas", "mi_x_final", "mi_y_final"):
            values = [r[metric] for r in cells if r[metric] is not None]
            if len(values) < 2:
                continue
            mean, lo, hi = aggregate_ci(values)
            rows.append({
                "model": spec.name, "metric": metric, "mean": mean,
                "ci_low": lo, "ci_high": hi, "n": len(values),
            })
    return rows


def _check_assertion(summary, model, metric, stat, op, value):
    rows = [r for r in summary if r["model"] == model and r["metric"] == metric]
    if not rows:
        return False, None
    key = {"mean": "mean", "min": "ci_low", "max": "ci_high"}[stat]
    observed = rows[0][key]
    ops = {
        "<=": observed <= value, ">=": observed >= value,
        "<": observed < value, ">": observed > value,
    }
    return ops[op], observed


def compute_curves(exp: ExperimentConfig, out_dir: str, results: list, seed_offset: int = 0) -> list:
    """Intervention curves over the test split for every intervention-capable
    model, reusing per-seed concept subsets across models."""
    rows = []
    datasets = {
        run_seed: build_dataset(exp.dataset, run_seed, seed_offset) for run_seed in exp.seeds
    }
    for spec in exp.model_specs:
        if spec.kind == "noconcept":
            continue
        per_policy = {}
        for r in results:
            if r["model"] != spec.name or r["failed"]:
                continue
            params, cfg = models.load(r["checkpoint"], expect_kind=spec.kind)
            ds = datasets[r["seed"]]
            for policy in POLICIES:
                curve = intervention_curve(
                    params, cfg, ds, policy=policy, seeds=[r["seed"]]
                )
                for point in curve:
                    per_policy.setdefault((policy, point["d"]), []).extend(point["accuracies"])
        for (policy, d), accs in sorted(per_policy.items()):
            if len(accs) >= 2:
                mean, lo, hi = aggregate_ci(accs)
            else:
                mean = lo = hi = accs[0]
            rows.append({
                "model": spec.name, "policy": policy, "d": d,
                "acc_mean": mean, "ci_low": lo, "ci_high": hi, "seed_count": len(accs),
            })
    return rows


# ---------------------------------------------------------------------------
# Activation dumps


def dump_activations(record: models.BottleneckRecord, concepts: np.ndarray,
                     labels: np.ndarray, cfg: models.ArchitectureConfig, path) -> None:
    header = {
        "kind": cfg.kind,
        "n_concepts": cfg.n_concepts,
        "emb_size": cfg.emb_size,
        "n_samples": int(concepts.shape[0]),
        "rep_widths": [int(r.shape[1]) for r in record.concept_reprs],
    }
    arrays = [(f"rep{i}", r) for i, r in enumerate(record.concept_reprs)]
    arrays += [
        ("probs", record.probs),
        ("bottleneck", record.bottleneck),
        ("concepts", concepts.astype(np.float64)),
        ("labels", labels.astype(np.float64)),
    ]
    container.write(path, _DUMP_MAGIC, _DUMP_VERSION, header, arrays)


def load_activations(path):
    header, arrays = container.read(path, _DUMP_MAGIC, _DUMP_VERSION)
    k = header["n_concepts"]
    n = header["n_samples"]
    reps = [arrays[f"rep{i}"] for i in range(k)]
    for name in ("probs", "bottleneck", "concepts", "labels"):
        if name not in arrays:
            raise container.ContainerError(f"{path}: missing block {name!r}")
    if any(r.shape[0] != n for r in reps) or arrays["concepts"].shape[0] != n:
        raise container.ContainerError(f"{path}: header N={n} does not match block sizes")
    return header, reps, arrays["probs"], arrays["bottleneck"], arrays["concepts"], arrays["labels"]


def offline_metrics(dump_path, delta: int = 50, seed: int = 0) -> dict:
    """CAS and MI recomputed from an activation dump."""
    header, reps, probs, bottleneck, concepts, labels = load_activations(dump_path)
    rep_set = metrics.ConceptRepresentationSet(reps=reps, labels=concepts, provenance=header["kind"])
    out = {"model": header["kind"], "cas": metrics.cas(rep_set, delta=delta, seed=seed)}
    mcfg = metrics.MIEstimatorConfig(dim=bottleneck.shape[1])
    out["mi_x"] = metrics.kde_mi(bottleneck, target="input", cfg=mcfg)
    out["mi_y"] = metrics.kde_mi(bottleneck, target="labels", labels=labels.astype(np.int64), cfg=mcfg)
    out["mi_c"] = metrics.kde_mi(bottleneck, target="concepts", labels=concepts, cfg=mcfg)
    return out
