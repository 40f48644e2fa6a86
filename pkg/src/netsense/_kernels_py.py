"""Pure-numpy implementations of the region-code kernels.

Mirrors the compiled ``_kernels`` module exactly; selected by
:mod:`netsense.kernels` when the extension is missing or disabled.
"""

import numpy as np


def region_codes(pre, boundaries):
    """Index of the half-open interval of ``boundaries`` holding each entry."""
    pre = np.asarray(pre, dtype=np.float64)
    if not np.all(np.isfinite(pre)):
        raise FloatingPointError("non-finite preactivation")
    codes = np.zeros(pre.shape, dtype=np.int8)
    for b in boundaries:
        codes += pre >= b
    return codes


def accumulate_transitions(pre, boundaries, prev, per_neuron, per_arc):
    """Stream consecutive rows of ``pre`` and accumulate code changes.

    ``per_arc[j]`` receives the L1 distance between the codes of row j-1
    (``prev`` for j = 0) and row j. ``per_neuron`` is updated in place.
    Returns the codes of the last row. ``prev`` may be None, in which case
    ``per_arc[0]`` is left at 0.
    """
    codes = region_codes(pre, boundaries)
    if codes.shape[0] == 0:
        return prev
    if prev is not None:
        stacked = np.concatenate([prev[None, :], codes], axis=0)
    else:
        stacked = codes
    diffs = np.abs(np.diff(stacked.astype(np.int64), axis=0))
    per_neuron += diffs.sum(axis=0)
    arc_sums = diffs.sum(axis=1)
    if prev is not None:
        per_arc[:] = arc_sums
    else:
        per_arc[0] = 0
        per_arc[1:] = arc_sums
    return codes[-1].copy()


def neighbor_mismatch_mask(codes):
    """Mark grid cells whose code differs from any 4-neighbor.

    ``codes`` has shape (rows, cols, neurons).
    """
    codes = np.asarray(codes)
    rows, cols = codes.shape[:2]
    mask = np.zeros((rows, cols), dtype=np.uint8)
    vert = np.any(codes[1:] != codes[:-1], axis=2)
    horiz = np.any(codes[:, 1:] != codes[:, :-1], axis=2)
    mask[1:] |= vert
    mask[:-1] |= vert
    mask[:, 1:] |= horiz
    mask[:, :-1] |= horiz
    return mask
