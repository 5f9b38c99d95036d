"""Voxel-wise one-sample t-statistics and deterministic randomness.

The random generator is SplitMix64, pinned bit-exactly so that any
implementation of this pipeline draws identical sign vectors and hence
produces identical p-values for the same master seed. Streams are pure
values derived from (master_seed, stream_index); they are never shared
between workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from .errors import DimMismatchError
from .volume import Volume

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_STREAM_SALT = 0xA0761D6478BD642F

_U53_SCALE = 2.0 ** -53


@dataclass
class TMap:
    """One-sample t map with its degrees of freedom.

    Out-of-mask voxels are exactly 0; in-mask voxels with zero sample
    variance are forced to 0 and counted in ``zero_variance_count``.
    """

    volume: Volume
    df: int
    zero_variance_count: int


def one_sample_tmap(stack, signs):
    """Compute the one-sample t map of a (possibly sign-flipped) stack.

    Parameters
    ----------
    stack : SubjectStack
    signs : array-like of +1/-1, length N
        Per-subject sign flips; all ones gives the observed map.

    Returns
    -------
    TMap
        t[v] = mean(y) / (sd(y) / sqrt(N)) with y_i = signs[i]*subject_i[v]
        and sd the sample standard deviation (divisor N-1).
    """
    signs = np.asarray(signs)
    n = stack.n_subjects
    if signs.shape != (n,):
        raise DimMismatchError(f"signs length {signs.shape} does not match N={n}")
    if not np.all(np.abs(signs) == 1):
        raise ValueError("signs must be +1 or -1")

    x = stack.data_matrix
    y = signs.astype(np.float64)[:, None] * x
    mean = y.mean(axis=0)
    dev = y - mean
    var = (dev * dev).sum(axis=0) / (n - 1)
    zero_var = var == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mean / np.sqrt(var / n)
    t[zero_var] = 0.0

    grid = np.zeros(stack.dims, dtype=np.float64, order="F")
    grid.ravel(order="F")[stack.inmask_indices] = t
    vol = Volume(dims=stack.dims, voxel_size=stack.voxel_size, data=grid)
    return TMap(volume=vol, df=n - 1, zero_variance_count=int(zero_var.sum()))


# ---------------------------------------------------------------------------
# Student-t tail and quantile
# ---------------------------------------------------------------------------

def t_upper_tail(t, df):
    """P(T_df >= t) via the regularized incomplete beta function."""
    df = _check_df(df)
    t = float(t)
    if t < 0.0:
        return 1.0 - t_upper_tail(-t, df)
    x = df / (df + t * t)
    return 0.5 * float(betainc(0.5 * df, 0.5, x))


def t_upper_quantile(p, df):
    """Invert the upper tail: return t* with P(T_df >= t*) = p.

    Parameters
    ----------
    p : float in (0, 0.5]
        Upper-tail probability (a cluster-defining threshold expressed
        as a voxel-level p-value).
    df : int >= 1

    Notes
    -----
    Monotone numerical inversion of :func:`t_upper_tail`, accurate to
    better than 1e-8 absolute.
    """
    df = _check_df(df)
    p = float(p)
    if not 0.0 < p <= 0.5:
        raise ValueError(f"tail probability must be in (0, 0.5], got {p}")
    if p == 0.5:
        return 0.0
    hi = 2.0
    while t_upper_tail(hi, df) > p:
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover - unreachable for p > 0
            raise RuntimeError("failed to bracket the t quantile")
    return float(brentq(lambda t: t_upper_tail(t, df) - p, 0.0, hi, xtol=1e-12))


def _check_df(df):
    if int(df) != df or df < 1:
        raise ValueError(f"df must be a positive integer, got {df}")
    return int(df)


# ---------------------------------------------------------------------------
# SplitMix64 streams
# ---------------------------------------------------------------------------

def _mix64(z):
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """SplitMix64 stream, a pure function of (master_seed, stream_index).

    ``RngStream(seed)`` seeds the raw generator state directly;
    ``RngStream(master_seed, stream_index)`` derives an independent
    per-index stream (salted XOR init followed by one discarded step).
    """

    __slots__ = ("state", "master_seed", "stream_index")

    def __init__(self, master_seed, stream_index=None):
        self.master_seed = int(master_seed) & _MASK64
        if stream_index is None:
            self.stream_index = 0
            self.state = self.master_seed
        else:
            self.stream_index = int(stream_index) & _MASK64
            salt = ((self.stream_index + 1) * _STREAM_SALT) & _MASK64
            self.state = self.master_seed ^ salt
            self.next_u64()  # discard one step

    def next_u64(self):
        """Advance and return the next 64-bit output."""
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix64(self.state)

    def next_block(self, n):
        """Next ``n`` outputs as a uint64 array (bit-identical to n calls)."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK64
        return _mix64_np(states)

    def uniform_block(self, n):
        """Next ``n`` uniforms in (0, 1): top 53 bits, clamped away from 0."""
        u = (self.next_block(n) >> np.uint64(11)).astype(np.float64) * _U53_SCALE
        return np.maximum(u, _U53_SCALE)

    def standard_normal(self):
        """One Box-Muller normal variate (the paired variate is discarded)."""
        return float(self.normal_block(1)[0])

    def normal_block(self, n):
        """Next ``n`` Box-Muller normals, two uniforms per draw."""
        u = self.uniform_block(2 * n)
        return np.sqrt(-2.0 * np.log(u[0::2])) * np.cos(2.0 * np.pi * u[1::2])


def rng_sign_vector(master_seed, realization_index, n):
    """Deterministic +/-1 vector for one sign-flip realization.

    Index 0 is reserved for the observed (all +1) labeling and rejected.
    Sign j is +1 when bit 0 of the j-th stream output is 0, else -1.
    """
    if realization_index < 1:
        raise ValueError("realization_index 0 is reserved for the observed data")
    if n < 2:
        raise ValueError(f"need at least 2 subjects, got {n}")
    raws = RngStream(master_seed, realization_index).next_block(n)
    return np.where((raws & np.uint64(1)) == 0, 1, -1).astype(np.int64)
