"""Benjamini-Hochberg step-up FDR control over cluster p-values.

Rejections are derived from the q-values, never computed separately:
``rejected[i]`` is defined as ``q[i] <= alpha``, so the advertised
invariant holds by construction and no float-comparison drift can open
a gap between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidPValueError


@dataclass(frozen=True)
class FdrResult:
    """Outcome of one BH pass, in the input's original order."""

    rejected: np.ndarray
    q_values: np.ndarray
    alpha: float
    k_star: int


def bh_step_up(p_values, alpha):
    """Benjamini-Hochberg at level alpha.

    q_(i) = min over j >= i of m * p_(j) / j, clamped to 1; a test is
    rejected iff its q-value is <= alpha. Equivalent to rejecting the
    k* smallest p-values where k* = max{i : p_(i) <= i*alpha/m}.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"p_values must be 1-D, got shape {p.shape}")
    m = p.size
    if m == 0:
        return FdrResult(
            rejected=np.empty(0, dtype=bool),
            q_values=np.empty(0, dtype=np.float64),
            alpha=float(alpha),
            k_star=0,
        )
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidPValueError("p-values must be finite and within [0, 1]")

    order = np.argsort(p, kind="stable")
    ranks = np.arange(1, m + 1, dtype=np.float64)
    # The association p * (m/i) is load-bearing: p*m/i drifts above alpha
    # at exact step-up ties (e.g. 0.05*3/3), p * (m/i) does not.
    scaled = p[order] * (m / ranks)
    # Running minimum from the right enforces monotonicity of q.
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    np.minimum(q_sorted, 1.0, out=q_sorted)
    q = np.empty(m, dtype=np.float64)
    q[order] = q_sorted
    rejected = q <= alpha
    return FdrResult(
        rejected=rejected,
        q_values=q,
        alpha=float(alpha),
        k_star=int(rejected.sum()),
    )


def apply_fdr_to_clusters(clusters, alpha):
    """Score a cluster list: fill q_value and significant_fdr from BH.

    Clusters must already carry p_uncorrected; the family is exactly the
    clusters passed in. Returns new Cluster objects in the same order.
    """
    for c in clusters:
        if c.p_uncorrected is None:
            raise InvalidPValueError(f"cluster {c.id} has no uncorrected p-value")
    if not clusters:
        return []
    result = bh_step_up([c.p_uncorrected for c in clusters], alpha)
    return [
        replace(c, q_value=float(q), significant_fdr=bool(r))
        for c, q, r in zip(clusters, result.q_values, result.rejected)
    ]
