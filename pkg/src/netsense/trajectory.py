"""Closed input-space trajectories and planar sampling grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANCHOR_PHASES = (np.pi / 3, np.pi, 5 * np.pi / 3)
PLANE_RADIUS = 0.8
PLANE_ANGLES = (np.pi / 2, 7 * np.pi / 6, 11 * np.pi / 6)


class DegenerateAnchorError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    anchor_indices: tuple[int, ...] | None = None
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2:
            raise ValueError("trajectory points must be a k x d matrix")
        if pts.shape[0] < 3:
            raise SamplingError(f"a closed trajectory needs k >= 3 points, got {pts.shape[0]}")
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def rotated(self, shift: int) -> "Trajectory":
        """Same loop with sample indices cyclically shifted by ``shift``."""
        anchors = None
        if self.anchor_indices is not None:
            anchors = tuple((a - shift) % self.k for a in self.anchor_indices)
        return Trajectory(np.roll(self.points, -shift, axis=0), anchors)


def _angles(k: int) -> np.ndarray:
    return 2 * np.pi * np.arange(k) / k


def _check_k(k: int):
    if k < 3:
        raise SamplingError(f"k must be at least 3, got {k}")


def random_ellipse(d: int, k: int, seed: int) -> Trajectory:
    """Origin-centred ellipse a cos(theta) + b sin(theta), a and b standard normal."""
    if d < 2:
        raise ValueError("d must be at least 2")
    _check_k(k)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(d)
    b = rng.standard_normal(d)
    if k % 2 == 0:
        # second half is the exact negation of the first
        theta = _angles(k)[: k // 2]
        half = np.outer(np.cos(theta), a) + np.outer(np.sin(theta), b)
        pts = np.concatenate([half, -half])
    else:
        theta = _angles(k)
        pts = np.outer(np.cos(theta), a) + np.outer(np.sin(theta), b)
    return Trajectory(pts)


def _check_anchors(anchors):
    for i in range(3):
        for j in range(i + 1, 3):
            if np.array_equal(anchors[i], anchors[j]):
                raise DegenerateAnchorError(f"anchors {i} and {j} coincide")


def ellipse_coefficients(x1, x2, x3) -> np.ndarray:
    """Rows (c, u, v) of the ellipse c + u cos(t) + v sin(t) through the anchors.

    The anchors are hit at phases pi/3, pi and 5 pi/3.
    """
    anchors = np.stack([np.asarray(x, dtype=np.float64) for x in (x1, x2, x3)])
    _check_anchors(anchors)
    basis = np.array([[1.0, np.cos(t), np.sin(t)] for t in ANCHOR_PHASES])
    return np.linalg.solve(basis, anchors)


def data_fitted_ellipse(x1, x2, x3, k: int = 600, seed: int | None = None) -> Trajectory:
    """Ellipse through three data points placed at phases pi/3, pi, 5 pi/3.

    ``seed`` is accepted for interface symmetry; the construction is
    deterministic.
    """
    _check_k(k)
    coef = ellipse_coefficients(x1, x2, x3)
    theta = _angles(k)
    pts = coef[0] + np.outer(np.cos(theta), coef[1]) + np.outer(np.sin(theta), coef[2])
    anchors = None
    if k % 6 == 0:
        anchors = (k // 6, k // 2, 5 * k // 6)
    return Trajectory(pts, anchors)


def translation_trajectory(image, width: int, height: int, k: int) -> Trajectory:
    """Loop through all horizontal cyclic shifts, linearly interpolated.

    Shift s sits at parameter s / width of the loop; samples in between mix
    the two neighbouring shifts.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size != width * height:
        raise ValueError(f"image of size {img.size} is not {height}x{width}")
    if k < width:
        raise SamplingError(f"k = {k} is smaller than the {width} shifts it must contain")
    _check_k(k)
    grid = img.reshape(height, width)
    shifts = np.stack([np.roll(grid, s, axis=1).reshape(-1) for s in range(width)])
    pts = np.empty((k, img.size))
    for j in range(k):
        pos, rem = divmod(j * width, k)
        if rem == 0:
            pts[j] = shifts[pos]
        else:
            frac = rem / k
            # a + f (b - a) is exact wherever the two shifts agree
            pts[j] = shifts[pos] + frac * (shifts[(pos + 1) % width] - shifts[pos])
    anchors = tuple(j for j in range(k) if (j * width) % k == 0)
    return Trajectory(pts, anchors)


def plane_vertices() -> np.ndarray:
    return np.array([[PLANE_RADIUS * np.cos(a), PLANE_RADIUS * np.sin(a)] for a in PLANE_ANGLES])


@dataclass(frozen=True)
class PlaneGrid:
    points: np.ndarray
    coords: np.ndarray
    resolution: int
    origin: np.ndarray
    axes: np.ndarray

    def to_input(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return self.origin + uv @ self.axes


def plane_grid(x1, x2, x3, resolution: int) -> PlaneGrid:
    """Uniform grid on [-1, 1]^2 mapped into input space.

    The affine map sends an origin-centred equilateral triangle of
    circumradius 0.8 onto the three anchors. Points are row-major with the
    row index running over the second plane coordinate.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    anchors = np.stack([np.asarray(x, dtype=np.float64) for x in (x1, x2, x3)])
    _check_anchors(anchors)
    verts = plane_vertices()
    basis = np.column_stack([np.ones(3), verts])
    coef = np.linalg.solve(basis, anchors)
    origin, axes = coef[0], coef[1:]
    ticks = np.linspace(-1.0, 1.0, resolution)
    vv, uu = np.meshgrid(ticks, ticks, indexing="ij")
    coords = np.column_stack([uu.ravel(), vv.ravel()])
    return PlaneGrid(origin + coords @ axes, coords, resolution, origin, axes)
