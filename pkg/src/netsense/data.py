"""Dataset ingestion, per-example standardization, augmentation and label noise."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_UBYTE = 0x08
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class DatasetConsistencyError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"
    image_shape: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.asarray(self.inputs)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"inputs must be a non-empty N x d matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DatasetConsistencyError(
                f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} inputs"
            )
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs contain non-finite entries")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64, copy=False))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            self.inputs[idx],
            self.labels[idx],
            self.n_classes,
            name or self.name,
            self.image_shape,
        )

    def with_labels(self, labels, name: str | None = None) -> "Dataset":
        return Dataset(self.inputs, labels, self.n_classes, name or self.name, self.image_shape)

    def with_inputs(self, inputs, name: str | None = None) -> "Dataset":
        return Dataset(inputs, self.labels, self.n_classes, name or self.name, self.image_shape)


def _open_maybe_gzip(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX tensor (optionally gzip-compressed)."""
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != IDX_UBYTE or ndim < 1:
        raise IdxFormatError(f"{path}: bad magic number 0x{raw[:4].hex()}")
    header_len = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_len)
    if payload.size != expected:
        raise IdxFormatError(f"{path}: payload has {payload.size} bytes, header says {expected}")
    return payload.reshape(dims)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX; gzip-compressed when the path ends in .gz."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, IDX_UBYTE, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_idx(images_path, labels_path, n_classes: int = 10, name: str = "idx") -> Dataset:
    """Load an IDX image/label pair with pixels scaled to [0, 1].

    Images are flattened row-major; standardization is left to the caller.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected rank-3 image tensor (magic 0x00000803)")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected rank-1 label tensor (magic 0x00000801)")
    if images.shape[0] != labels.shape[0]:
        raise DatasetConsistencyError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    n, h, w = images.shape
    x = images.reshape(n, h * w).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), n_classes, name, image_shape=(h, w))


def standardize_per_example(x) -> np.ndarray:
    """Shift and scale each example to zero mean and unit population variance.

    Works on a single d-vector or row-wise on an N x d matrix. The result has
    Euclidean norm sqrt(d) per example.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("standardization needs at least 2 entries")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite entries")
    centered = x - x.mean(axis=-1, keepdims=True)
    std = np.sqrt(np.mean(centered**2, axis=-1, keepdims=True))
    if np.any(std == 0):
        raise DegenerateInputError("constant example has zero variance")
    return centered / std


def standardize_dataset(ds: Dataset) -> Dataset:
    return ds.with_inputs(standardize_per_example(ds.inputs))


@dataclass(frozen=True)
class AugmentConfig:
    max_translate_px: int = 4
    wrap: bool = True
    hflip_prob: float = 0.5
    image_width: int = 28
    image_height: int = 28

    def __post_init__(self):
        if self.max_translate_px < 0:
            raise ValueError("max_translate_px must be non-negative")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be positive")
        if self.max_translate_px > min(self.image_width, self.image_height):
            raise ValueError("max_translate_px exceeds the image size")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must lie in [0, 1]")


def shift_image(img: np.ndarray, dy: int, dx: int, wrap: bool = True) -> np.ndarray:
    """Translate an (H, W) image; pixel (r, c) moves to (r + dy, c + dx)."""
    if wrap:
        return np.roll(img, (dy, dx), axis=(0, 1))
    out = np.zeros_like(img)
    h, w = img.shape
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x)
    h, w = cfg.image_height, cfg.image_width
    if x.shape[-1] != h * w:
        raise ValueError(f"vector of length {x.shape[-1]} does not match a {h}x{w} image")
    m = cfg.max_translate_px
    dy, dx = rng.integers(-m, m + 1, size=2)
    img = shift_image(x.reshape(h, w), int(dy), int(dx), cfg.wrap)
    if cfg.hflip_prob > 0 and rng.random() < cfg.hflip_prob:
        img = img[:, ::-1]
    return img.reshape(-1).copy()


def augment_batch(xs, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(x, cfg, rng) for x in np.asarray(xs)])


def randomize_labels(ds: Dataset, seed: int) -> Dataset:
    """Replace labels with i.i.d. uniform draws; inputs are shared, not copied."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, ds.n_classes, size=len(ds))
    return ds.with_labels(labels, name=f"{ds.name}-random-labels")


def synthetic_blobs(
    n_per_class: int,
    d: int,
    n_classes: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Unit-variance Gaussian clusters whose centers are ``separation`` apart.

    Centers sit at ``separation / sqrt(2)`` times random orthonormal
    directions, so every pair of centers is exactly ``separation`` apart when
    ``n_classes <= d``.
    """
    if n_per_class < 1 or d < 2 or n_classes < 2:
        raise ValueError("need n_per_class >= 1, d >= 2 and n_classes >= 2")
    rng = np.random.default_rng(seed)
    k = min(n_classes, d)
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    dirs = q.T
    if n_classes > d:
        extra = rng.standard_normal((n_classes - d, d))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        dirs = np.vstack([dirs, extra])
    centers = dirs * (separation / np.sqrt(2.0))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    inputs = centers[labels] + rng.standard_normal((labels.size, d))
    return Dataset(inputs, labels, n_classes, name=f"blobs-{seed}")


def split_train_test(ds: Dataset, n_train: int, n_test: int | None, seed: int):
    """Shuffle deterministically and cut into train/test subsets."""
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_test = len(ds) - n_train if n_test is None else n_test
    if n_train + n_test > len(ds):
        raise ValueError(f"requested {n_train}+{n_test} examples from {len(ds)}")
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train : n_train + n_test])


IDX_FILENAMES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def export_idx_split(images, labels, out_dir, n_test: int, seed: int = 0) -> dict:
    """Shuffle uint8 images (N, H, W) and write MNIST-style train/test IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    perm = np.random.default_rng(seed).permutation(len(labels))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {key: out / name for key, name in IDX_FILENAMES.items()}
    write_idx(paths["train_images"], images[train_idx])
    write_idx(paths["train_labels"], labels[train_idx])
    write_idx(paths["test_images"], images[test_idx])
    write_idx(paths["test_labels"], labels[test_idx])
    return paths
