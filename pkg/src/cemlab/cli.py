"""Command-line entry point.

Verbs:
  run     train/evaluate every (model, seed) cell of one or more configs
  curve   intervention curves from a completed run's checkpoints
  probe   linear-probe evaluation from a completed run's checkpoints
  metrics offline CAS/MI over activation dumps
  sweep   rerun a config over a grid of one parameter (p_int, emb_size,
          or concept_fraction)

The CEMLAB_OUT environment variable overrides the default output
directory.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import data, experiment, metrics, models


def _out_dir(args) -> str:
    return os.environ.get("CEMLAB_OUT", args.out)


def _load_configs(paths):
    return [(p, experiment.parse_config(p)) for p in paths]


def cmd_run(args) -> int:
    status = 0
    base = _out_dir(args)
    configs = _load_configs(args.config)
    for path, exp in configs:
        sub = os.path.join(base, exp.dataset.name) if len(configs) > 1 else base
        print(f"[cemlab] running {path} -> {sub}")
        rc = experiment.run_experiment(exp, sub, jobs=args.jobs, seed_offset=args.seed_offset)
        if rc != 0:
            status = rc
    return status


def _checkpoints(exp, out_dir):
    """Load (spec, seed, params, cfg) for every cell with a checkpoint."""
    cells = []
    for spec in exp.model_specs:
        for seed in exp.seeds:
            path = os.path.join(out_dir, "checkpoints", f"{spec.name}_{seed}.ckpt")
            if not os.path.exists(path):
                raise SystemExit(f"missing checkpoint {path}; run `cemlab run` first")
            params, cfg = models.load(path, expect_kind=spec.kind)
            cells.append((spec, seed, params, cfg))
    return cells


def cmd_curve(args) -> int:
    (_, exp), = _load_configs([args.config])
    out_dir = _out_dir(args)
    results = []
    for spec, seed, params, cfg in _checkpoints(exp, out_dir):
        results.append({
            "model": spec.name, "seed": seed, "failed": False,
            "checkpoint": os.path.join(out_dir, "checkpoints", f"{spec.name}_{seed}.ckpt"),
        })
    rows = experiment.compute_curves(exp, out_dir, results, args.seed_offset)
    experiment._write_csv(
        os.path.join(out_dir, "curves.csv"),
        ("model", "policy", "d", "acc_mean", "ci_low", "ci_high", "seed_count"),
        rows,
    )
    print(f"[cemlab] wrote {os.path.join(out_dir, 'curves.csv')}")
    return 0


def cmd_probe(args) -> int:
    (_, exp), = _load_configs([args.config])
    out_dir = _out_dir(args)
    probe_rows = []
    for spec, seed, params, cfg in _checkpoints(exp, out_dir):
        ds = experiment.build_dataset(exp.dataset, seed, args.seed_offset)
        full = data.generate(
            exp.dataset.name, n=exp.dataset.n,
            seed=experiment._dataset_seed(exp.dataset.seed, seed, args.seed_offset),
            **({"latent_scale": exp.dataset.latent_scale} if exp.dataset.name in ("trig", "dot") else {}),
        )
        _, rec = models.evaluate(params, cfg, ds.features)
        result = metrics.linear_probe(
            rec.bottleneck, full.concepts, ds.rows("train"), ds.rows("test")
        )
        for j in range(full.concepts.shape[1]):
            probe_rows.append({
                "model": spec.name, "seed": seed, "target": f"c{j}",
                "accuracy": result.accuracies[j], "degenerate": int(result.degenerate[j]),
            })
    experiment._write_csv(
        os.path.join(out_dir, "probe.csv"),
        ("model", "seed", "target", "accuracy", "degenerate"),
        probe_rows,
    )
    print(f"[cemlab] wrote {os.path.join(out_dir, 'probe.csv')}")
    return 0


def cmd_metrics(args) -> int:
    rows = []
    for path in args.dump:
        row = experiment.offline_metrics(path, delta=args.delta, seed=args.seed)
        row["dump"] = os.path.basename(path)
        rows.append(row)
        print(f"[cemlab] {path}: cas={row['cas']:.4f} mi_x={row['mi_x']:.4f}")
    if args.out:
        experiment._write_csv(
            os.path.join(_out_dir(args), "offline_metrics.csv"),
            ("dump", "model", "cas", "mi_x", "mi_y", "mi_c"),
            rows,
        )
    return 0


_SWEEPABLE = ("p_int", "emb_size", "concept_fraction")


def cmd_sweep(args) -> int:
    (_, exp), = _load_configs([args.config])
    if args.param not in _SWEEPABLE:
        raise SystemExit(f"sweepable parameters: {_SWEEPABLE}")
    base = _out_dir(args)
    status = 0
    for raw in args.values.split(","):
        value = float(raw)
        import copy

        variant = copy.deepcopy(exp)
        if args.param == "concept_fraction":
            variant.dataset.concept_fraction = value
        else:
            for spec in variant.model_specs:
                if args.param == "p_int":
                    spec.p_int = value
                else:
                    spec.emb_size = int(value)
        sub = os.path.join(base, f"{args.param}={raw}")
        print(f"[cemlab] sweep {args.param}={raw} -> {sub}")
        rc = experiment.run_experiment(variant, sub, jobs=args.jobs, seed_offset=args.seed_offset)
        if rc != 0:
            status = rc
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemlab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config_nargs=None):
        if config_nargs:
            p.add_argument("--config", nargs="+", required=True, help="experiment config file(s)")
        else:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default="results", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.add_argument("--seed-offset", type=int, default=0, dest="seed_offset")

    p_run = sub.add_parser("run", help="execute experiment configs")
    common(p_run, config_nargs="+")
    p_run.set_defaults(func=cmd_run)

    p_curve = sub.add_parser("curve", help="intervention curves from checkpoints")
    common(p_curve)
    p_curve.set_defaults(func=cmd_curve)

    p_probe = sub.add_parser("probe", help="linear probes from checkpoints")
    common(p_probe)
    p_probe.set_defaults(func=cmd_probe)

    p_metrics = sub.add_parser("metrics", help="offline metrics over activation dumps")
    p_metrics.add_argument("--dump", nargs="+", required=True)
    p_metrics.add_argument("--delta", type=int, default=50)
    p_metrics.add_argument("--seed", type=int, default=0)
    p_metrics.add_argument("--out", default="")
    p_metrics.set_defaults(func=cmd_metrics)

    p_sweep = sub.add_parser("sweep", help="grid over one parameter")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=_SWEEPABLE)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except experiment.ConfigError as exc:
        print(f"[cemlab] config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
