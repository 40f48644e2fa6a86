"""Jacobian-norm and linear-region transition metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import Mlp, hidden_preactivations, logit_input_jacobian, softmax_input_jacobian
from .trajectory import PlaneGrid, SamplingError, Trajectory

JACOBIAN_CHUNK = 256
CODE_CHUNK = 4096


def jacobian_norm(m: Mlp, x) -> float:
    return float(np.linalg.norm(softmax_input_jacobian(m, np.asarray(x))))


def jacobian_norms(m: Mlp, points, chunk: int = JACOBIAN_CHUNK) -> np.ndarray:
    """Frobenius norm of the softmax Jacobian at every row of ``points``."""
    pts = np.asarray(points)
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        jac = softmax_input_jacobian(m, pts[start : start + chunk])
        out[start : start + chunk] = np.sqrt(np.sum(jac * jac, axis=(1, 2)))
    return out


@dataclass(frozen=True)
class SensitivityReport:
    per_point_norms: np.ndarray
    mean_norm: float

    @property
    def point_count(self) -> int:
        return len(self.per_point_norms)


def mean_jacobian_norm(m: Mlp, points) -> SensitivityReport:
    pts = np.atleast_2d(np.asarray(points))
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    norms = jacobian_norms(m, pts)
    return SensitivityReport(norms, math.fsum(norms) / len(norms))


@dataclass(frozen=True)
class TransitionCount:
    per_neuron: np.ndarray
    per_arc: np.ndarray

    @property
    def total(self) -> int:
        return int(self.per_arc.sum())

    @property
    def k_used(self) -> int:
        return len(self.per_arc)


def _points_of(t) -> np.ndarray:
    return t.points if isinstance(t, Trajectory) else np.asarray(t)


def count_transitions(m: Mlp, t, chunk: int = CODE_CHUNK, layers=None) -> TransitionCount:
    """Sum of L1 code distances between consecutive samples of a closed loop.

    Codes are streamed ``chunk`` samples at a time; ``per_arc[i]`` is the
    distance between samples i and (i + 1) mod k.
    """
    pts = _points_of(t)
    k = pts.shape[0]
    if k < 3:
        raise SamplingError(f"need k >= 3 samples, got {k}")
    bounds = m.activation.boundaries
    pre0 = hidden_preactivations(m, pts[:1], layers)
    n_units = pre0.shape[1]
    per_neuron = np.zeros(n_units, dtype=np.int64)
    # per_step[i] holds the distance between samples i-1 and i
    per_step = np.zeros(k, dtype=np.int64)
    first = kernels.region_codes(pre0, bounds)[0]
    prev = None
    for start in range(0, k, chunk):
        pre = hidden_preactivations(m, pts[start : start + chunk], layers)
        prev = kernels.accumulate_transitions(
            pre, bounds, prev, per_neuron, per_step[start : start + pre.shape[0]]
        )
    # closing arc k-1 -> 0
    closing = np.abs(prev.astype(np.int64) - first.astype(np.int64))
    per_neuron += closing
    per_arc = np.empty(k, dtype=np.int64)
    per_arc[:-1] = per_step[1:]
    per_arc[-1] = closing.sum()
    return TransitionCount(per_neuron, per_arc)


def mean_transitions(m: Mlp, trajectories, **kwargs) -> float:
    totals = [count_transitions(m, t, **kwargs).total for t in trajectories]
    if not totals:
        raise ValueError("need at least one trajectory")
    return sum(totals) / len(totals)


@dataclass(frozen=True)
class SensitivityProfile:
    norms: np.ndarray
    densities: np.ndarray
    window: int

    @property
    def n_buckets(self) -> int:
        return len(self.densities)


def sensitivity_profile(m: Mlp, t, window: int) -> SensitivityProfile:
    """Per-sample Jacobian norms plus transition counts in arcs of ``window`` samples."""
    pts = _points_of(t)
    k = pts.shape[0]
    if window < 1 or k % window:
        raise ValueError(f"window {window} must be positive and divide k = {k}")
    counts = count_transitions(m, pts)
    densities = counts.per_arc.reshape(-1, window).sum(axis=1)
    return SensitivityProfile(jacobian_norms(m, pts), densities, window)


def curvature_estimate(m: Mlp, t, chunk: int = JACOBIAN_CHUNK) -> float:
    """Half the summed Frobenius change of the logit Jacobian around the loop."""
    pts = _points_of(t)
    k = pts.shape[0]
    if k < 3:
        raise SamplingError(f"need k >= 3 samples, got {k}")
    first = logit_input_jacobian(m, pts[0])
    prev = None
    terms = []
    for start in range(0, k, chunk):
        jac = logit_input_jacobian(m, pts[start : start + chunk])
        if prev is not None:
            jac_ext = np.concatenate([prev[None], jac])
        else:
            jac_ext = jac
        diff = np.diff(jac_ext, axis=0)
        terms.extend(np.sqrt(np.sum(diff * diff, axis=(1, 2))))
        prev = jac[-1]
    closing = first - prev
    terms.append(np.sqrt(np.sum(closing * closing)))
    return 0.5 * math.fsum(terms)


@dataclass(frozen=True)
class BoundaryMap:
    labels: np.ndarray
    mask: np.ndarray


def boundary_map(m: Mlp, grid: PlaneGrid, layer_selector: str = "last_hidden") -> BoundaryMap:
    """Region labels on a plane grid and the mask of cells on a region boundary.

    Labels number distinct codes in order of first appearance (row-major).
    """
    if layer_selector == "last_hidden":
        layers = [m.depth - 1] if m.depth else []
    elif layer_selector == "all":
        layers = None
    else:
        raise ValueError(f"unknown layer selector {layer_selector!r}")
    res = grid.resolution
    codes = np.concatenate(
        [
            kernels.region_codes(hidden_preactivations(m, grid.points[s : s + CODE_CHUNK], layers), m.activation.boundaries)
            for s in range(0, grid.points.shape[0], CODE_CHUNK)
        ]
    )
    if codes.shape[1] == 0:
        labels = np.zeros((res, res), dtype=np.int64)
        return BoundaryMap(labels, np.zeros((res, res), dtype=bool))
    _, first_idx, inverse = np.unique(codes, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first_idx))
    labels = order[inverse.reshape(-1)].reshape(res, res)
    mask = kernels.neighbor_mismatch_mask(codes.reshape(res, res, -1)).astype(bool)
    return BoundaryMap(labels, mask)
