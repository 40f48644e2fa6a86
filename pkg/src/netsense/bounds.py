"""Relations between per-point cross-entropy loss and Jacobian norms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nn import Mlp, forward, logit_input_jacobian, softmax, softmax_jacobian_from_logit_jacobian
from .train import per_example_losses

CHUNK = 256


@dataclass(frozen=True)
class BoundsContext:
    """``M`` is the mean squared logit-Jacobian Frobenius norm divided by ``n``."""

    M: float
    n: int

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if self.n < 2:
            raise ValueError("bounds need at least two classes")


def estimate_M(m: Mlp, points) -> BoundsContext:
    pts = np.atleast_2d(np.asarray(points))
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    sq = []
    for start in range(0, pts.shape[0], CHUNK):
        jac = logit_input_jacobian(m, pts[start : start + CHUNK])
        sq.extend(np.sum(jac * jac, axis=(1, 2)))
    return BoundsContext(math.fsum(sq) / len(sq) / m.n_classes, m.n_classes)


def target_row_terms(m: Mlp, x, y: int) -> tuple[float, float, float]:
    """Squared target-row norm and its expansion over logit gradients.

    Returns ``(lhs, diagonal, cross)``. ``lhs`` is computed from the softmax
    Jacobian. ``diagonal`` keeps only the squared per-logit gradient norms,
    weighted by the probabilities; ``cross`` holds the inner products between
    distinct logit gradients. ``lhs == diagonal + cross`` up to rounding, and
    ``cross`` vanishes when the logit gradients are mutually orthogonal.
    """
    x = np.asarray(x)
    if not 0 <= y < m.n_classes:
        raise ValueError(f"class {y} out of range")
    logit_jac = logit_input_jacobian(m, x)
    probs = softmax(forward(m, x).logits)
    row = softmax_jacobian_from_logit_jacobian(probs, logit_jac)[y]
    lhs = float(row @ row)
    gram = logit_jac @ logit_jac.T
    # row y equals a^T F with a = s_y (e_y - s)
    a = -probs[y] * probs
    a[y] += probs[y]
    diagonal = float(np.sum(a * a * np.diag(gram)))
    off = gram - np.diag(np.diag(gram))
    cross = float(a @ off @ a)
    return lhs, diagonal, cross


def target_row_identity(m: Mlp, x, y: int) -> tuple[float, float]:
    """Both sides of the exact expansion of the squared target-row norm.

    lhs comes from the softmax Jacobian; rhs from the probabilities and the
    Gram matrix of the per-logit gradients.
    """
    lhs, diagonal, cross = target_row_terms(m, x, y)
    return lhs, diagonal + cross


def _confidence_term(loss):
    p = np.exp(-np.asarray(loss, dtype=np.float64))
    return p * (1.0 - p)


def jy_bounds(loss, ctx: BoundsContext):
    """Approximate envelope of the target-row norm as a function of the loss."""
    if np.any(np.asarray(loss) < 0):
        raise ValueError("loss must be non-negative")
    n = ctx.n
    if n < 2:
        raise ValueError("bounds need at least two classes")
    g = _confidence_term(loss)
    lower = math.sqrt(n * ctx.M / (n - 1)) * g
    upper = math.sqrt(2 * ctx.M) * g
    return lower, upper


def full_norm_lower(loss, ctx: BoundsContext):
    return jy_bounds(loss, ctx)[0]


def full_norm_approx(loss, ctx: BoundsContext):
    """Full Jacobian norm when the non-target probabilities share 1 - p_y evenly."""
    n = ctx.n
    p = np.exp(-np.asarray(loss, dtype=np.float64))
    # n - 2 first: at n = 2 adding it last would absorb the tiny n^2 p^2 into 2
    return math.sqrt(ctx.M) / (n - 1) * (1.0 - p) * np.sqrt(n * n * p * p + (n - 2))


@dataclass(frozen=True)
class PointBounds:
    point_id: int
    loss: float
    cross_entropy: float
    jy_actual: float
    full_actual: float
    jy_lower: float
    jy_upper: float
    full_lower: float
    full_approx: float
    correct: bool


REPORT_COLUMNS = (
    "point_id",
    "loss",
    "jy_actual",
    "full_actual",
    "jy_lower",
    "jy_upper",
    "full_lower",
    "full_approx",
    "M",
    "n",
    "cross_entropy",
    "correct",
)


def per_point_report(
    m: Mlp,
    testset: Dataset,
    loss_kind: str = "cross_entropy",
    ctx: BoundsContext | None = None,
) -> tuple[BoundsContext, list[PointBounds]]:
    """One row per test point; ``M`` is estimated over the same points unless given.

    The envelope columns always use the cross-entropy loss; ``loss`` holds
    the loss of ``loss_kind``.
    """
    x, y = testset.inputs, testset.labels
    if ctx is None:
        ctx = estimate_M(m, x)
    rows = []
    for start in range(0, len(testset), CHUNK):
        xb, yb = x[start : start + CHUNK], y[start : start + CHUNK]
        out = forward(m, xb).logits
        probs = softmax(out)
        jac = softmax_jacobian_from_logit_jacobian(probs, logit_input_jacobian(m, xb))
        full = np.sqrt(np.sum(jac * jac, axis=(1, 2)))
        jy_rows = jac[np.arange(len(yb)), yb]
        jy = np.sqrt(np.sum(jy_rows * jy_rows, axis=1))
        ce = per_example_losses(out, yb, "cross_entropy")
        lk = ce if loss_kind == "cross_entropy" else per_example_losses(out, yb, loss_kind)
        lower, upper = jy_bounds(ce, ctx)
        approx = full_norm_approx(ce, ctx)
        pred = np.argmax(out, axis=1)
        for i in range(len(yb)):
            rows.append(
                PointBounds(
                    start + i,
                    float(lk[i]),
                    float(ce[i]),
                    float(jy[i]),
                    float(full[i]),
                    float(lower[i]),
                    float(upper[i]),
                    float(lower[i]),
                    float(approx[i]),
                    bool(pred[i] == yb[i]),
                )
            )
    return ctx, rows


def report_rows(ctx: BoundsContext, rows) -> list[dict]:
    return [
        {
            "point_id": r.point_id,
            "loss": r.loss,
            "jy_actual": r.jy_actual,
            "full_actual": r.full_actual,
            "jy_lower": r.jy_lower,
            "jy_upper": r.jy_upper,
            "full_lower": r.full_lower,
            "full_approx": r.full_approx,
            "M": ctx.M,
            "n": ctx.n,
            "cross_entropy": r.cross_entropy,
            "correct": int(r.correct),
        }
        for r in rows
    ]
