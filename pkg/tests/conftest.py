import os
from pathlib import Path

import numpy as np
import pytest

from netsense.data import IDX_FILENAMES, load_idx, standardize_dataset

REPO = Path(__file__).resolve().parents[1]
ACCEPTANCE_LINES = []


def mnist_dir() -> Path | None:
    env = os.environ.get("NETSENSE_MNIST_DIR")
    candidates = [Path(env)] if env else []
    candidates.append(REPO / "data" / "mnist")
    for c in candidates:
        if all((c / name).exists() for name in IDX_FILENAMES.values()):
            return c
    return None


@pytest.fixture(scope="session")
def mnist_paths():
    d = mnist_dir()
    if d is None:
        pytest.fail("MNIST IDX files not found; run scripts/prepare_mnist_subset.py or set NETSENSE_MNIST_DIR")
    return {key: str(d / name) for key, name in IDX_FILENAMES.items()}


@pytest.fixture(scope="session")
def mnist(mnist_paths):
    """(train 1k subset, test set), standardized per example."""
    train = load_idx(mnist_paths["train_images"], mnist_paths["train_labels"], name="mnist-train")
    test = load_idx(mnist_paths["test_images"], mnist_paths["test_labels"], name="mnist-test")
    train = standardize_dataset(train.subset(np.arange(1000)))
    return train, standardize_dataset(test)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_mnist_net(mnist):
    """A quickly trained 784-32-32-10 ReLU net for tests that need realistic weights."""
    from netsense.nn import init_network, mlp_widths
    from netsense.train import OptimizerConfig, train

    train_ds, test_ds = mnist
    net = init_network(mlp_widths(784, 32, 2, 10), "relu", seed=0)
    cfg = OptimizerConfig(kind="momentum", learning_rate=0.01, batch_size=100, total_steps=300)
    return train(net, train_ds, test_ds, cfg, seed=0).network
