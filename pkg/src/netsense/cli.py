"""Command-line entry point: ``netsense {train,measure,trajectory,bounds,study}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .bounds import REPORT_COLUMNS, per_point_report, report_rows
from .harness import ConfigError, DatasetSpec, image_shape_of, load_datasets, write_csv
from .nn import init_network, load_network, mlp_widths, save_network
from .sensitivity import (
    boundary_map,
    count_transitions,
    curvature_estimate,
    jacobian_norms,
    sensitivity_profile,
)
from .train import OptimizerConfig, train
from .trajectory import plane_grid, translation_trajectory

STUDY_ALIASES = {
    "trajectory": "trajectory_study",
    "boundary": "boundary_study",
    "paired": "paired_factor",
    "sweep": "sweep",
    "per-point": "per_point",
}
TRAJECTORY_FLAGS = {"random-ellipse": "random", "data-ellipse": "different_class", "translation": "translation"}


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--train-images")
    g.add_argument("--train-labels")
    g.add_argument("--test-images")
    g.add_argument("--test-labels")
    g.add_argument("--synthetic", action="store_true", help="use Gaussian blobs instead of IDX files")
    g.add_argument("--n-train", type=int, default=None)
    g.add_argument("--n-test", type=int, default=None)
    g.add_argument("--dtype", choices=("float64", "float32"), default="float64")


def _dataset_spec(args, base: DatasetSpec | None = None) -> DatasetSpec:
    spec = base or DatasetSpec()
    updates = {}
    if args.synthetic:
        updates["source"] = "synthetic"
    elif args.train_images or base is None:
        updates.update(
            source="idx",
            train_images=args.train_images,
            train_labels=args.train_labels,
            test_images=args.test_images,
            test_labels=args.test_labels,
        )
    if args.n_train is not None:
        updates["n_train"] = args.n_train
    if args.n_test is not None:
        updates["n_test"] = args.n_test
    return dataclasses.replace(spec, **updates)


TRAIN_CONFIG_KEYS = {"dataset", "network", "optimizer", "loss", "seed"}
NETWORK_KEYS = {"width", "depth", "activation", "init_std_multiplier"}


def _load_train_config(path):
    raw = yaml.safe_load(Path(path).read_text()) or {}
    for key in raw:
        if key not in TRAIN_CONFIG_KEYS:
            raise ConfigError(f"{key}: unknown key")
    for key in raw.get("network", {}) or {}:
        if key not in NETWORK_KEYS:
            raise ConfigError(f"network.{key}: unknown key")
    opt_fields = {f.name for f in dataclasses.fields(OptimizerConfig)}
    for key in raw.get("optimizer", {}) or {}:
        if key not in opt_fields:
            raise ConfigError(f"optimizer.{key}: unknown key")
    return raw


def cmd_train(args):
    raw = _load_train_config(args.config) if args.config else {}
    base = harness._build_section(DatasetSpec, raw.get("dataset"), "dataset") if "dataset" in raw else None
    ds_spec = _dataset_spec(args, base)
    train_ds, test_ds = load_datasets(ds_spec, args.dtype)
    net_cfg = {"width": 100, "depth": 2, "activation": "relu", "init_std_multiplier": 1.0}
    net_cfg.update(raw.get("network") or {})
    for key in NETWORK_KEYS:
        value = getattr(args, key)
        if value is not None:
            net_cfg[key] = value
    opt_cfg = dict(raw.get("optimizer") or {})
    for flag, key in (("optimizer", "kind"), ("learning_rate", "learning_rate"), ("batch_size", "batch_size"), ("steps", "total_steps")):
        value = getattr(args, flag)
        if value is not None:
            opt_cfg[key] = int(value) if key == "batch_size" and str(value).isdigit() else value
    seed = args.seed if args.seed is not None else raw.get("seed", 1)
    loss = args.loss or raw.get("loss", "cross_entropy")
    widths = mlp_widths(train_ds.dim, int(net_cfg["width"]), int(net_cfg["depth"]), train_ds.n_classes)
    net = init_network(widths, net_cfg["activation"], float(net_cfg["init_std_multiplier"]), seed, np.dtype(args.dtype))
    outcome = train(net, train_ds, test_ds, OptimizerConfig(**opt_cfg), loss, seed=seed)
    save_network(outcome.network, args.out)
    summary = {
        "checkpoint": str(args.out),
        "widths": list(widths),
        "activation": outcome.network.activation.value,
        "seed": seed,
        "loss": loss,
        "optimizer": opt_cfg,
        "train_accuracy": outcome.train_accuracy,
        "test_accuracy": outcome.test_accuracy,
        "generalization_gap": outcome.generalization_gap,
        "fit": outcome.fit,
        "steps": outcome.steps_run,
        "final_loss": outcome.loss_history[-1] if outcome.loss_history else None,
    }
    text = json.dumps(summary, indent=2)
    if args.summary:
        Path(args.summary).write_text(text + "\n")
    print(text)


def _trajectories(kind, args, train_ds, test_ds):
    if kind == "translation":
        h, w = image_shape_of(test_ds)
        return [translation_trajectory(x, w, h, max(args.k, w)) for x in test_ds.inputs[: args.count]]
    return [harness.build_trajectory(TRAJECTORY_FLAGS[kind], train_ds, args.k, args.seed + i) for i in range(args.count)]


def cmd_measure(args):
    net = load_network(args.checkpoint)
    train_ds, test_ds = load_datasets(_dataset_spec(args), args.dtype)
    metric = args.metric
    if metric == "jacobian":
        pts = test_ds.inputs[: args.count]
        norms = jacobian_norms(net, pts)
        rows = [{"point_id": i, "jacobian_norm": v} for i, v in enumerate(norms)]
        text = write_csv(args.out, rows, ("point_id", "jacobian_norm"), [f"mean_jacobian_norm={float(np.mean(norms))!r}"])
    elif metric in ("transitions", "curvature"):
        rows = []
        for i, traj in enumerate(_trajectories(args.trajectory, args, train_ds, test_ds)):
            if metric == "transitions":
                tc = count_transitions(net, traj)
                rows.append({"trajectory_id": i, "k": tc.k_used, "transitions": tc.total})
            else:
                rows.append({"trajectory_id": i, "k": traj.k, "curvature": curvature_estimate(net, traj)})
        text = write_csv(args.out, rows, tuple(rows[0].keys()))
    elif metric == "profile":
        traj = _trajectories(args.trajectory, args, train_ds, test_ds)[0]
        prof = sensitivity_profile(net, traj, args.window)
        per_arc = count_transitions(net, traj).per_arc
        rows = [
            {"index": i, "bucket": i // args.window, "jacobian_norm": prof.norms[i], "transitions_to_next": per_arc[i]}
            for i in range(traj.k)
        ]
        text = write_csv(args.out, rows, ("index", "bucket", "jacobian_norm", "transitions_to_next"))
    else:
        idx = harness.pick_anchors(train_ds, "different_class", np.random.default_rng([args.seed, 99]))
        grid = plane_grid(*train_ds.inputs[idx], args.resolution)
        bmap = boundary_map(net, grid, args.layers)
        res = args.resolution
        rows = [
            {"row": r, "col": c, "u": grid.coords[r * res + c, 0], "v": grid.coords[r * res + c, 1],
             "label": bmap.labels[r, c], "boundary": int(bmap.mask[r, c])}
            for r in range(res)
            for c in range(res)
        ]
        text = write_csv(args.out, rows, ("row", "col", "u", "v", "label", "boundary"))
    if args.out is None:
        sys.stdout.write(text)


def cmd_trajectory(args):
    train_ds, test_ds = load_datasets(_dataset_spec(args), args.dtype)
    args.count = 1
    traj = _trajectories(args.kind, args, train_ds, test_ds)[0]
    if args.out and str(args.out).endswith(".npy"):
        np.save(args.out, traj.points)
        return
    buf = "\n".join(",".join(repr(float(v)) for v in row) for row in traj.points) + "\n"
    if args.out:
        Path(args.out).write_text(buf)
    else:
        sys.stdout.write(buf)


def cmd_bounds(args):
    net = load_network(args.checkpoint)
    _, test_ds = load_datasets(_dataset_spec(args), args.dtype)
    subset = test_ds.subset(np.arange(min(args.count, len(test_ds))))
    ctx, rows = per_point_report(net, subset, args.loss)
    text = write_csv(
        args.out,
        report_rows(ctx, rows),
        REPORT_COLUMNS,
        [f"M estimated over the first {len(subset)} test points"],
    )
    if args.out is None:
        sys.stdout.write(text)


def cmd_study(args):
    spec = harness.parse_config(args.config)
    kind = STUDY_ALIASES[args.study]
    if spec.kind != kind:
        raise ConfigError(f"kind: config describes {spec.kind!r}, command asked for {kind!r}")
    if args.seed is not None:
        spec = dataclasses.replace(spec, seeds=(args.seed,))
    out = args.out or spec.output
    rows = harness.run_study(spec, out)
    print(f"{len(rows)} rows written to {out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="netsense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network and write a checkpoint")
    _add_data_flags(p)
    p.add_argument("--config")
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--activation")
    p.add_argument("--init-std-multiplier", type=float)
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam", "rmsprop"))
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size")
    p.add_argument("--steps", type=int)
    p.add_argument("--loss", choices=("cross_entropy", "l2"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--summary", help="write the run summary JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("measure", help="evaluate a sensitivity metric of a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("jacobian", "transitions", "curvature", "profile", "boundary"), required=True)
    p.add_argument("--trajectory", choices=tuple(TRAJECTORY_FLAGS), default="translation")
    p.add_argument("--k", type=int, default=224)
    p.add_argument("--count", type=int, default=10, help="points or trajectories to evaluate")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--resolution", type=int, default=48)
    p.add_argument("--layers", choices=("last_hidden", "all"), default="last_hidden")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("trajectory", help="emit the points of one trajectory")
    _add_data_flags(p)
    p.add_argument("--kind", choices=tuple(TRAJECTORY_FLAGS), default="random-ellipse")
    p.add_argument("--k", type=int, default=600)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="CSV (one point per line) or .npy")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("bounds", help="per-point loss vs. Jacobian-norm report")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--loss", choices=("cross_entropy", "l2"), default="cross_entropy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("study", help="run a configured experiment")
    p.add_argument("study", choices=tuple(STUDY_ALIASES))
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    p.add_argument("--out")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"netsense: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
