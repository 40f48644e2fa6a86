"""Config-driven experiment studies with deterministic CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bounds import REPORT_COLUMNS, per_point_report, report_rows
from .data import (
    AugmentConfig,
    Dataset,
    load_idx,
    randomize_labels,
    split_train_test,
    standardize_dataset,
    synthetic_blobs,
)
from .nn import Activation, init_network, mlp_widths
from .sensitivity import (
    boundary_map,
    jacobian_norms,
    mean_jacobian_norm,
    mean_transitions,
    sensitivity_profile,
)
from .train import FULL, OptimizerConfig, TrainingError, train
from .trajectory import data_fitted_ellipse, plane_grid, random_ellipse, translation_trajectory

log = logging.getLogger(__name__)

STUDY_KINDS = ("trajectory_study", "boundary_study", "paired_factor", "sweep", "per_point")
FACTORS = ("labels", "augmentation", "activation", "batch")
TRAJECTORY_KINDS = ("random", "different_class", "same_class")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "idx"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    n_train: int | None = 1000
    n_test: int | None = None
    n_classes: int = 10
    standardize: bool = True
    # synthetic blobs
    n_per_class: int = 40
    dim: int = 16
    separation: float = 10.0
    synthetic_seed: int = 0


@dataclass(frozen=True)
class NetworkGrid:
    width: tuple = (50, 100, 200)
    depth: tuple = (2, 3, 5)
    activation: tuple = ("relu", "relu6", "hard_tanh", "hard_sigmoid")
    init_std_multiplier: tuple = (1.0,)


@dataclass(frozen=True)
class OptimizerGrid:
    kind: tuple = ("momentum",)
    learning_rate: tuple = (0.01,)
    batch_size: tuple = (100,)
    total_steps: tuple = (3000,)
    loss: tuple = ("cross_entropy",)
    decay_factor: float = 0.1
    decay_interval_steps: int | None = None


@dataclass(frozen=True)
class MeasureSpec:
    dtype: str = "float64"
    k: int = 600
    window: int = 20
    jacobian_points: int = 500
    transition_points: int = 10
    translation_k: int = 224
    resolution: int = 48
    per_point_points: int = 1000
    layer_selector: str = "last_hidden"
    trajectory_kinds: tuple = TRAJECTORY_KINDS


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    network: NetworkGrid = field(default_factory=NetworkGrid)
    optimizer: OptimizerGrid = field(default_factory=OptimizerGrid)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seeds: tuple = (1, 2, 3)
    factor: str | None = None
    output: str = "study.csv"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ConfigError(f"kind: unknown study {self.kind!r}; choose from {STUDY_KINDS}")
        if not self.seeds:
            raise ConfigError("seeds: must be a non-empty list")
        if (self.factor is not None) != (self.kind == "paired_factor"):
            raise ConfigError("factor: required for paired_factor studies and only for them")
        if self.factor is not None and self.factor not in FACTORS:
            raise ConfigError(f"factor: unknown factor {self.factor!r}; choose from {FACTORS}")
        for grid in (self.network, self.optimizer):
            for f in dataclasses.fields(grid):
                value = getattr(grid, f.name)
                if isinstance(value, tuple) and not value:
                    raise ConfigError(f"{f.name}: grid must be non-empty")
        for kind in self.measure.trajectory_kinds:
            if kind not in TRAJECTORY_KINDS:
                raise ConfigError(f"trajectory_kinds: unknown kind {kind!r}")


SECTIONS = {
    "dataset": DatasetSpec,
    "network": NetworkGrid,
    "optimizer": OptimizerGrid,
    "measure": MeasureSpec,
    "augment": AugmentConfig,
}


def _build_section(cls, raw, section: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = names[key].default
        if isinstance(default, tuple):
            value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def spec_from_dict(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    top = {f.name for f in dataclasses.fields(ExperimentSpec)}
    kwargs = {}
    for key, value in raw.items():
        if key not in top:
            raise ConfigError(f"{key}: unknown key")
        if key in SECTIONS:
            kwargs[key] = _build_section(SECTIONS[key], value, key)
        elif key == "seeds":
            kwargs[key] = tuple(int(s) for s in (value if isinstance(value, list) else [value]))
        else:
            kwargs[key] = value
    if "kind" not in kwargs:
        raise ConfigError("kind: missing required key")
    return ExperimentSpec(**kwargs)


def parse_config(path) -> ExperimentSpec:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return spec_from_dict(raw or {})


# --------------------------------------------------------------------------
# grid expansion


@dataclass(frozen=True)
class RunConfig:
    width: int
    depth: int
    activation: str
    init_std_multiplier: float
    optimizer: str
    learning_rate: float
    batch_size: int | str
    total_steps: int
    loss_kind: str

    def row(self) -> dict:
        return dataclasses.asdict(self)

    def optimizer_config(self, grid: OptimizerGrid, **overrides) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=overrides.get("batch_size", self.batch_size),
            total_steps=self.total_steps,
            decay_factor=grid.decay_factor,
            decay_interval_steps=grid.decay_interval_steps,
        )


CONFIG_COLUMNS = tuple(f.name for f in dataclasses.fields(RunConfig))


def expand_grid(spec: ExperimentSpec) -> list[RunConfig]:
    """Cartesian product of the network and optimizer grids, in a fixed order."""
    net, opt = spec.network, spec.optimizer
    combos = itertools.product(
        net.width,
        net.depth,
        net.activation,
        net.init_std_multiplier,
        opt.kind,
        opt.learning_rate,
        opt.batch_size,
        opt.total_steps,
        opt.loss,
    )
    out = []
    for w, d, a, s, k, lr, bs, steps, loss in combos:
        out.append(
            RunConfig(int(w), int(d), Activation.parse(a).value, float(s), str(k), float(lr), bs, int(steps), str(loss))
        )
    return out


# --------------------------------------------------------------------------
# data


def load_datasets(ds: DatasetSpec, dtype="float64") -> tuple[Dataset, Dataset]:
    if ds.source == "idx":
        paths = (ds.train_images, ds.train_labels, ds.test_images, ds.test_labels)
        if any(p is None for p in paths):
            raise ConfigError("dataset: idx source needs train/test image and label paths")
        train_ds = load_idx(ds.train_images, ds.train_labels, ds.n_classes, "train")
        test_ds = load_idx(ds.test_images, ds.test_labels, ds.n_classes, "test")
        if ds.n_train is not None:
            train_ds = train_ds.subset(np.arange(min(ds.n_train, len(train_ds))))
        if ds.n_test is not None:
            test_ds = test_ds.subset(np.arange(min(ds.n_test, len(test_ds))))
    elif ds.source == "synthetic":
        full = synthetic_blobs(2 * ds.n_per_class, ds.dim, ds.n_classes, ds.separation, ds.synthetic_seed)
        n_train = ds.n_per_class * ds.n_classes
        train_ds, test_ds = split_train_test(full, n_train, None, ds.synthetic_seed)
    else:
        raise ConfigError(f"dataset.source: unknown source {ds.source!r}")
    if ds.standardize:
        train_ds, test_ds = standardize_dataset(train_ds), standardize_dataset(test_ds)
    dt = np.dtype(dtype)
    return (
        train_ds.with_inputs(train_ds.inputs.astype(dt)),
        test_ds.with_inputs(test_ds.inputs.astype(dt)),
    )


def image_shape_of(ds: Dataset) -> tuple[int, int]:
    """(height, width); vectors without a declared shape are one pixel row."""
    return ds.image_shape if ds.image_shape is not None else (1, ds.dim)


def pick_anchors(ds: Dataset, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Indices of three training points of distinct classes or of one class."""
    classes = np.unique(ds.labels)
    if kind == "different_class":
        if len(classes) < 3:
            raise DataError("need at least three classes for a different-class ellipse")
        chosen = rng.choice(classes, size=3, replace=False)
        return np.array([rng.choice(np.flatnonzero(ds.labels == c)) for c in chosen])
    eligible = [c for c in classes if np.count_nonzero(ds.labels == c) >= 3]
    if not eligible:
        raise DataError("no class has three examples for a same-class ellipse")
    c = rng.choice(eligible)
    return rng.choice(np.flatnonzero(ds.labels == c), size=3, replace=False)


# --------------------------------------------------------------------------
# per-cell work


def _train_network(cfg: RunConfig, spec: ExperimentSpec, train_ds, test_ds, seed, augment=None, **overrides):
    activation = overrides.pop("activation", cfg.activation)
    widths = mlp_widths(train_ds.dim, cfg.width, cfg.depth, train_ds.n_classes)
    net = init_network(widths, activation, cfg.init_std_multiplier, seed, np.dtype(spec.measure.dtype))
    opt = cfg.optimizer_config(spec.optimizer, **overrides)
    return train(net, train_ds, test_ds, opt, cfg.loss_kind, augment=augment, seed=seed)


def _jacobian_subset(spec: ExperimentSpec, test_ds: Dataset) -> np.ndarray:
    # seed-independent so rows are comparable across configs
    return test_ds.inputs[: spec.measure.jacobian_points]


def _translation_trajectories(spec: ExperimentSpec, test_ds: Dataset):
    h, w = image_shape_of(test_ds)
    k = max(spec.measure.translation_k, w)
    for x in test_ds.inputs[: spec.measure.transition_points]:
        yield translation_trajectory(x, w, h, k)


def _side_metrics(outcome, spec, test_ds) -> dict:
    return {
        "train_acc": outcome.train_accuracy,
        "test_acc": outcome.test_accuracy,
        "gap": outcome.generalization_gap,
        "fit": int(outcome.fit),
        "mean_jacobian_norm": mean_jacobian_norm(outcome.network, _jacobian_subset(spec, test_ds)).mean_norm,
        "mean_transitions": mean_transitions(outcome.network, _translation_trajectories(spec, test_ds)),
    }


def _sweep_cell(args):
    spec, cfg, seed, train_ds, test_ds = args
    row = {**cfg.row(), "seed": seed}
    try:
        outcome = _train_network(cfg, spec, train_ds, test_ds, seed)
    except TrainingError as exc:
        log.warning("config %s seed %d diverged: %s", cfg, seed, exc)
        nan = float("nan")
        return {**row, "status": "diverged", "train_acc": nan, "test_acc": nan, "gap": nan,
                "fit": 0, "mean_jacobian_norm": nan, "mean_transitions": nan}
    metrics = _side_metrics(outcome, spec, test_ds)
    return {**row, "status": "fit" if outcome.fit else "unfit", **metrics}


PAIRED_SIDES = {
    "labels": ("true", "random"),
    "augmentation": ("off", "on"),
    "activation": ("relu", "hard_sigmoid"),
    "batch": ("minibatch", "full"),
}


def _paired_cell(args):
    spec, cfg, seed, train_ds, test_ds = args
    factor = spec.factor
    sides = {}
    for side in PAIRED_SIDES[factor]:
        ds, augment, overrides = train_ds, None, {}
        if factor == "labels" and side == "random":
            ds = randomize_labels(train_ds, seed)
        elif factor == "augmentation" and side == "on":
            augment = spec.augment
        elif factor == "activation":
            overrides["activation"] = side
        elif factor == "batch" and side == "full":
            overrides["batch_size"] = FULL
        try:
            outcome = _train_network(cfg, spec, ds, test_ds, seed, augment, **overrides)
        except TrainingError as exc:
            log.warning("paired cell %s seed %d side %s diverged: %s", cfg, seed, side, exc)
            sides[side] = None
            continue
        sides[side] = _side_metrics(outcome, spec, test_ds)
    return sides


def _map(fn, jobs, workers: int):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


# --------------------------------------------------------------------------
# CSV


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def rows_to_csv(rows, columns, comments=()) -> str:
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns, comments=()) -> str:
    text = rows_to_csv(rows, columns, comments)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------
# studies


SWEEP_COLUMNS = CONFIG_COLUMNS + (
    "seed",
    "status",
    "fit",
    "train_acc",
    "test_acc",
    "gap",
    "mean_jacobian_norm",
    "mean_transitions",
)


def run_sweep(spec: ExperimentSpec, out=None) -> list[dict]:
    """One row per (config, seed); diverged runs stay in the table, flagged."""
    train_ds, test_ds = load_datasets(spec.dataset, spec.measure.dtype)
    jobs = [(spec, cfg, seed, train_ds, test_ds) for cfg in expand_grid(spec) for seed in spec.seeds]
    rows = _map(_sweep_cell, jobs, spec.workers)
    write_csv(out if out is not None else spec.output, rows, SWEEP_COLUMNS)
    return rows


SIDE_METRICS = ("train_acc", "test_acc", "gap", "fit", "mean_jacobian_norm", "mean_transitions")


def paired_columns(factor: str) -> tuple:
    a, b = PAIRED_SIDES[factor]
    cols = ("cell",) + CONFIG_COLUMNS + ("seed", "factor", "side_a", "side_b")
    cols += tuple(f"a_{m}" for m in SIDE_METRICS) + tuple(f"b_{m}" for m in SIDE_METRICS)
    return cols + ("both_fit", "retained")


def run_paired_factor(spec: ExperimentSpec, out=None) -> list[dict]:
    """Train both sides of every grid cell; keep cells where at least one side fits.

    ``retained`` applies the 100%-fit filter (both sides fit), waived for
    the augmentation factor.
    """
    if spec.factor is None:
        raise ConfigError("factor: required for paired_factor studies")
    train_ds, test_ds = load_datasets(spec.dataset, spec.measure.dtype)
    cells = [(cfg, seed) for cfg in expand_grid(spec) for seed in spec.seeds]
    results = _map(_paired_cell, [(spec, cfg, seed, train_ds, test_ds) for cfg, seed in cells], spec.workers)
    a, b = PAIRED_SIDES[spec.factor]
    rows = []
    for i, ((cfg, seed), sides) in enumerate(zip(cells, results)):
        sa, sb = sides[a], sides[b]
        fits = [s is not None and s["fit"] for s in (sa, sb)]
        if sa is None or sb is None or not any(fits):
            log.info("cell %d (%s, seed %d) skipped: neither side usable at 100%% train accuracy", i, cfg, seed)
            if spec.factor != "augmentation" or sa is None or sb is None:
                continue
        both = all(fits)
        row = {"cell": i, **cfg.row(), "seed": seed, "factor": spec.factor, "side_a": a, "side_b": b}
        row.update({f"a_{m}": sa[m] for m in SIDE_METRICS})
        row.update({f"b_{m}": sb[m] for m in SIDE_METRICS})
        row["both_fit"] = int(both)
        row["retained"] = int(both or spec.factor == "augmentation")
        rows.append(row)
    write_csv(out if out is not None else spec.output, rows, paired_columns(spec.factor))
    return rows


TRAJECTORY_COLUMNS = CONFIG_COLUMNS + (
    "trajectory",
    "bucket",
    "start_index",
    "end_index",
    "mean_jacobian_norm",
    "transitions",
    "n_seeds",
)


def build_trajectory(kind: str, train_ds: Dataset, k: int, seed: int):
    rng = np.random.default_rng([seed, TRAJECTORY_KINDS.index(kind)])
    if kind == "random":
        return random_ellipse(train_ds.dim, k, int(rng.integers(2**31)))
    idx = pick_anchors(train_ds, kind, rng)
    return data_fitted_ellipse(*train_ds.inputs[idx], k=k)


def run_trajectory_study(spec: ExperimentSpec, out=None) -> list[dict]:
    """Seed-averaged sensitivity profiles along each trajectory kind."""
    train_ds, test_ds = load_datasets(spec.dataset, spec.measure.dtype)
    k, window = spec.measure.k, spec.measure.window
    if window < 1 or k % window:
        raise ConfigError(f"measure.window: {window} must divide measure.k = {k}")
    rows = []
    for cfg in expand_grid(spec):
        norms = {kind: [] for kind in spec.measure.trajectory_kinds}
        dens = {kind: [] for kind in spec.measure.trajectory_kinds}
        for seed in spec.seeds:
            net = _train_network(cfg, spec, train_ds, test_ds, seed).network
            for kind in spec.measure.trajectory_kinds:
                prof = sensitivity_profile(net, build_trajectory(kind, train_ds, k, seed), window)
                norms[kind].append(prof.norms.reshape(-1, window).mean(axis=1))
                dens[kind].append(prof.densities)
        for kind in spec.measure.trajectory_kinds:
            mean_norm = np.mean(norms[kind], axis=0)
            mean_dens = np.mean(dens[kind], axis=0)
            for b in range(k // window):
                rows.append(
                    {
                        **cfg.row(),
                        "trajectory": kind,
                        "bucket": b,
                        "start_index": b * window,
                        "end_index": (b + 1) * window - 1,
                        "mean_jacobian_norm": float(mean_norm[b]),
                        "transitions": float(mean_dens[b]),
                        "n_seeds": len(spec.seeds),
                    }
                )
    write_csv(out if out is not None else spec.output, rows, TRAJECTORY_COLUMNS)
    return rows


def anchor_contrast(net, train_ds: Dataset, seed: int, k: int = 600, n_ellipses: int = 4, radius: int = 3):
    """Mean Jacobian norm within ``radius`` samples of the anchors of
    data-fitted ellipses, and mean norm along random ellipses.

    Both trajectory families are drawn from generators derived from ``seed``.
    """
    if k % 6:
        raise ValueError("k must be a multiple of 6 so anchors land on samples")
    near, far = [], []
    for rep in range(n_ellipses):
        traj = build_trajectory("different_class", train_ds, k, seed * 1000 + rep)
        norms = jacobian_norms(net, traj.points)
        sel = np.concatenate([np.arange(a - radius, a + radius + 1) % k for a in traj.anchor_indices])
        near.append(norms[sel].mean())
        far.append(jacobian_norms(net, build_trajectory("random", train_ds, k, seed * 1000 + rep).points).mean())
    return float(np.mean(near)), float(np.mean(far))


BOUNDARY_COLUMNS = CONFIG_COLUMNS + (
    "seed",
    "stage",
    "resolution",
    "boundary_cells",
    "n_regions",
    "labels_file",
    "mask_file",
)


def _write_grid(path: Path, grid: np.ndarray):
    np.savetxt(path, grid.astype(np.int64), fmt="%d", delimiter=",")


def run_boundary_study(spec: ExperimentSpec, out=None) -> list[dict]:
    """Region labels and boundary masks on one plane slice, before and after training.

    Grid files are written next to the summary CSV as
    ``<stem>_c<config>_s<seed>_<stage>_{labels,mask}.csv``.
    """
    train_ds, test_ds = load_datasets(spec.dataset, spec.measure.dtype)
    out = Path(out if out is not None else spec.output)
    res = spec.measure.resolution
    rows = []
    for ci, cfg in enumerate(expand_grid(spec)):
        for seed in spec.seeds:
            idx = pick_anchors(train_ds, "different_class", np.random.default_rng([seed, 99]))
            grid = plane_grid(*train_ds.inputs[idx], res)
            widths = mlp_widths(train_ds.dim, cfg.width, cfg.depth, train_ds.n_classes)
            before = init_network(widths, cfg.activation, cfg.init_std_multiplier, seed, np.dtype(spec.measure.dtype))
            after = _train_network(cfg, spec, train_ds, test_ds, seed).network
            for stage, net in (("before", before), ("after", after)):
                bmap = boundary_map(net, grid, spec.measure.layer_selector)
                stem = f"{out.stem}_c{ci}_s{seed}_{stage}"
                labels_path = out.parent / f"{stem}_labels.csv"
                mask_path = out.parent / f"{stem}_mask.csv"
                out.parent.mkdir(parents=True, exist_ok=True)
                _write_grid(labels_path, bmap.labels)
                _write_grid(mask_path, bmap.mask)
                rows.append(
                    {
                        **cfg.row(),
                        "seed": seed,
                        "stage": stage,
                        "resolution": res,
                        "boundary_cells": int(bmap.mask.sum()),
                        "n_regions": int(bmap.labels.max()) + 1,
                        "labels_file": labels_path.name,
                        "mask_file": mask_path.name,
                    }
                )
    write_csv(out, rows, BOUNDARY_COLUMNS)
    return rows


PER_POINT_COLUMNS = CONFIG_COLUMNS + ("seed", "train_acc", "test_acc") + REPORT_COLUMNS


def run_per_point(spec: ExperimentSpec, out=None) -> list[dict]:
    train_ds, test_ds = load_datasets(spec.dataset, spec.measure.dtype)
    subset = test_ds.subset(np.arange(min(spec.measure.per_point_points, len(test_ds))))
    rows = []
    comments = []
    for cfg in expand_grid(spec):
        for seed in spec.seeds:
            outcome = _train_network(cfg, spec, train_ds, test_ds, seed)
            ctx, report = per_point_report(outcome.network, subset, cfg.loss_kind)
            comments.append(f"M estimated over the same {len(subset)} test points (config {cfg}, seed {seed})")
            base = {**cfg.row(), "seed": seed, "train_acc": outcome.train_accuracy, "test_acc": outcome.test_accuracy}
            rows.extend({**base, **r} for r in report_rows(ctx, report))
    write_csv(out if out is not None else spec.output, rows, PER_POINT_COLUMNS, comments)
    return rows


STUDIES = {
    "trajectory_study": run_trajectory_study,
    "boundary_study": run_boundary_study,
    "paired_factor": run_paired_factor,
    "sweep": run_sweep,
    "per_point": run_per_point,
}


def run_study(spec: ExperimentSpec, out=None) -> list[dict]:
    return STUDIES[spec.kind](spec, out)


def spearman(a, b) -> float:
    from scipy.stats import spearmanr

    if len(a) < 3:
        return math.nan
    return float(spearmanr(a, b).statistic)
