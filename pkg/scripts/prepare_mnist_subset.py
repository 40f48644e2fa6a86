"""Write an MNIST-style IDX train/test split from a CSV of 28x28 digits.

The CSV holds one example per row: 784 pixel values (0-255) followed by the
label. By default the 5,000-digit MNIST sample bundled with mlxtend is used
(``pip install --no-deps mlxtend``).

    python scripts/prepare_mnist_subset.py --out data/mnist
"""

import argparse
import gzip
import importlib.util
from pathlib import Path

import numpy as np

from netsense.data import export_idx_split


def bundled_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        raise SystemExit("mlxtend is not installed; pass --csv explicitly")
    return Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"


def read_digit_csv(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    return table[:, :-1].reshape(-1, 28, 28).astype(np.uint8), table[:, -1].astype(np.uint8)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--csv", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("data/mnist"))
    parser.add_argument("--n-test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    images, labels = read_digit_csv(args.csv or bundled_csv())
    paths = export_idx_split(images, labels, args.out, args.n_test, args.seed)
    for key, path in paths.items():
        print(f"{key}: {path}")


if __name__ == "__main__":
    main()
