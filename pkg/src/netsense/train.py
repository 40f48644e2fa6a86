"""Losses, optimizers, the step-decay schedule and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import AugmentConfig, Dataset, augment_batch
from .nn import Mlp, forward, loss_and_gradients, softmax

FULL = "full"
OPTIMIZERS = ("sgd", "momentum", "adam", "rmsprop")


class TrainingError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class NumericDivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "momentum"
    learning_rate: float = 0.005
    batch_size: int | str = 128
    total_steps: int = 2000
    decay_factor: float = 0.1
    # None: 500 epochs worth of steps, resolved against the training set size
    decay_interval_steps: int | None = None
    momentum_coeff: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-10

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {OPTIMIZERS}")
        object.__setattr__(self, "kind", kind)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum_coeff < 1:
            raise ValueError("momentum_coeff must lie in [0, 1)")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        bs = self.batch_size
        if isinstance(bs, str):
            if bs.lower() != FULL:
                raise ValueError(f"batch_size must be a positive integer or {FULL!r}")
            object.__setattr__(self, "batch_size", FULL)
        elif int(bs) < 1:
            raise ValueError("batch_size must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")

    def resolved_batch(self, n_examples: int) -> int:
        return n_examples if self.batch_size == FULL else min(int(self.batch_size), n_examples)

    def resolved(self, n_examples: int) -> "OptimizerConfig":
        """Fill in the default decay interval of 500 epochs."""
        if self.decay_interval_steps is not None:
            return self
        steps_per_epoch = math.ceil(n_examples / self.resolved_batch(n_examples))
        return replace(self, decay_interval_steps=500 * steps_per_epoch)


def loss_eval(logits, y: int, kind: str = "cross_entropy") -> float:
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < z.shape[-1]:
        raise ValueError(f"class {y} out of range")
    if kind == "cross_entropy":
        zmax = z.max()
        return float(zmax + np.log(np.sum(np.exp(z - zmax))) - z[y])
    if kind == "l2":
        target = np.zeros_like(z)
        target[y] = 1.0
        return float(np.sum((z - target) ** 2))
    raise ValueError(f"unknown loss kind {kind!r}")


def per_example_losses(logits, labels, kind: str = "cross_entropy") -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    rows = np.arange(z.shape[0])
    if kind == "cross_entropy":
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        return lse - z[rows, y]
    if kind == "l2":
        target = np.zeros_like(z)
        target[rows, y] = 1.0
        return np.sum((z - target) ** 2, axis=1)
    raise ValueError(f"unknown loss kind {kind!r}")


def lr_at(step: int, cfg: OptimizerConfig) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    interval = cfg.decay_interval_steps
    if interval is None or interval <= 0:
        raise ValueError("decay_interval_steps must be a positive integer")
    return cfg.learning_rate * cfg.decay_factor ** (step // interval)


@dataclass
class OptimizerState:
    weights: list
    slots: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_network(cls, m: Mlp) -> "OptimizerState":
        return cls([np.array(w) for w in m.weights])


def optimizer_step(state: OptimizerState, gradients, cfg: OptimizerConfig, step: int) -> OptimizerState:
    """Apply one update in place and return the state."""
    if len(gradients) != len(state.weights):
        raise ValueError("gradient list does not match the network")
    for g, w in zip(gradients, state.weights):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight shape {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericDivergenceError(f"non-finite gradient at step {step}")
    eta = lr_at(step, cfg)
    state.t += 1
    kind = cfg.kind
    for i, (w, g) in enumerate(zip(state.weights, gradients)):
        if kind == "sgd":
            w -= eta * g
        elif kind == "momentum":
            v = state.slots.setdefault(("v", i), np.zeros_like(w))
            v *= cfg.momentum_coeff
            v += g
            w -= eta * v
        elif kind == "adam":
            m1 = state.slots.setdefault(("m", i), np.zeros_like(w))
            m2 = state.slots.setdefault(("v", i), np.zeros_like(w))
            m1 *= cfg.beta1
            m1 += (1 - cfg.beta1) * g
            m2 *= cfg.beta2
            m2 += (1 - cfg.beta2) * g * g
            mhat = m1 / (1 - cfg.beta1**state.t)
            vhat = m2 / (1 - cfg.beta2**state.t)
            w -= eta * mhat / (np.sqrt(vhat) + cfg.epsilon)
        else:
            ms = state.slots.setdefault(("ms", i), np.zeros_like(w))
            ms *= cfg.rmsprop_decay
            ms += (1 - cfg.rmsprop_decay) * g * g
            w -= eta * g / np.sqrt(ms + cfg.rmsprop_epsilon)
    return state


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def accuracy(m: Mlp, ds: Dataset, chunk: int = 4096) -> float:
    correct = 0
    for start in range(0, len(ds), chunk):
        out = forward(m, ds.inputs[start : start + chunk]).logits
        correct += int(np.sum(np.argmax(out, axis=1) == ds.labels[start : start + chunk]))
    return correct / len(ds)


@dataclass(frozen=True)
class TrainOutcome:
    network: Mlp
    train_accuracy: float
    test_accuracy: float
    steps_run: int
    loss_history: tuple

    @property
    def generalization_gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    @property
    def fit(self) -> bool:
        return self.train_accuracy == 1.0


def train(
    m: Mlp,
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: OptimizerConfig,
    loss_kind: str = "cross_entropy",
    augment: AugmentConfig | None = None,
    seed: int = 0,
) -> TrainOutcome:
    """Run ``cfg.total_steps`` minibatch steps and evaluate on the full sets.

    Accuracy is measured on the canonical (unaugmented) inputs.
    """
    n = len(train_ds)
    cfg = cfg.resolved(n)
    batch = cfg.resolved_batch(n)
    state = OptimizerState.for_network(m)
    aug_rng = np.random.default_rng([seed, 0xA06])
    x_all, y_all = train_ds.inputs.astype(m.dtype, copy=False), train_ds.labels
    history = []
    epoch, perm, cursor = 0, epoch_permutation(seed, 0, n), 0
    for step in range(cfg.total_steps):
        if cursor >= n:
            epoch += 1
            perm, cursor = epoch_permutation(seed, epoch, n), 0
        idx = perm[cursor : cursor + batch]
        cursor += batch
        xb = x_all[idx]
        if augment is not None:
            xb = augment_batch(xb, augment, aug_rng).astype(m.dtype, copy=False)
        loss, grads = loss_and_gradients(m, xb, y_all[idx], loss_kind, weights=state.weights)
        if not math.isfinite(loss):
            raise TrainingError("loss became non-finite", step)
        history.append(loss)
        try:
            optimizer_step(state, grads, cfg, step)
        except NumericDivergenceError:
            raise TrainingError("gradient became non-finite", step) from None
    try:
        final = Mlp(m.widths, tuple(state.weights), m.activation)
    except ValueError:
        raise TrainingError("weights became non-finite", cfg.total_steps) from None
    return TrainOutcome(
        final,
        accuracy(final, train_ds),
        accuracy(final, test_ds),
        cfg.total_steps,
        tuple(history),
    )


def predict_proba(m: Mlp, x) -> np.ndarray:
    return softmax(forward(m, x).logits)
