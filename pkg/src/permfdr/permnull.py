"""Sign-flip permutation null distribution of cluster extent.

Each of the B realizations re-signs the subject maps, extracts clusters,
and contributes one *normalized* extent histogram: a realization with
K clusters gives each extent k mass count_k / K, and a realization with
no clusters puts all of its mass at extent 0. The pooled distribution is
the average of these per-realization contributions, so every realization
weighs exactly 1/B regardless of how many clusters it produced.

Pooling is done in exact rational arithmetic and converted to float once,
which makes the result bit-identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .clustering import Connectivity, extract_clusters
from .stats import one_sample_tmap, rng_sign_vector, t_upper_quantile

NULL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PermutationConfig:
    """Constants of one permutation analysis.

    Defaults follow the published protocol this implements: 5,000
    realizations, cluster-defining threshold p=.001 (or .01), FDR level
    .05. The master seed has no default; reproducibility is mandatory.
    """

    master_seed: int
    realizations: int = 5000
    cdt_p: float = 0.001
    connectivity: Connectivity = Connectivity.CORNERS26
    alpha_fdr: float = 0.05

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError(f"realizations must be >= 1, got {self.realizations}")
        if not 0.0 < self.cdt_p < 0.5:
            raise ValueError(f"cdt_p must be in (0, 0.5), got {self.cdt_p}")
        if not 0.0 < self.alpha_fdr < 1.0:
            raise ValueError(f"alpha_fdr must be in (0, 1), got {self.alpha_fdr}")
        object.__setattr__(self, "connectivity", Connectivity.parse(self.connectivity))
        object.__setattr__(self, "master_seed", int(self.master_seed))


@dataclass(frozen=True)
class ExtentNullDistribution:
    """Pooled null distribution of the extent of an arbitrary cluster.

    ``mass`` maps extent (0 for empty realizations) to probability mass;
    the remaining fields fingerprint the configuration that produced it.
    """

    mass: dict
    realizations: int
    zero_cluster_fraction: float
    cdt_p: float
    t_threshold: float
    df: int
    connectivity: Connectivity
    master_seed: int

    @property
    def config_fingerprint(self):
        return (
            self.cdt_p,
            self.t_threshold,
            self.df,
            self.connectivity.value,
            self.master_seed,
            self.realizations,
        )

    def p_value(self, extent):
        return null_pvalue(self, extent)

    def to_json(self):
        """Serialize per the pinned schema; masses at 17 significant digits."""
        pairs = ",".join(
            f"[{k},{self.mass[k]:.17g}]" for k in sorted(self.mass)
        )
        return (
            "{"
            f'"format_version":{NULL_FORMAT_VERSION},'
            f'"B":{self.realizations},'
            f'"master_seed":{self.master_seed},'
            f'"cdt_p":{self.cdt_p!r},'
            f'"t_threshold":{self.t_threshold!r},'
            f'"df":{self.df},'
            f'"connectivity":"{self.connectivity.value}",'
            f'"mass":[{pairs}]'
            "}\n"
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj.get("format_version") != NULL_FORMAT_VERSION:
            raise ValueError(f"unsupported null-distribution format: {obj.get('format_version')}")
        mass = {int(k): float(v) for k, v in obj["mass"]}
        zero = mass.get(0, 0.0)
        return cls(
            mass=mass,
            realizations=int(obj["B"]),
            zero_cluster_fraction=zero,
            cdt_p=float(obj["cdt_p"]),
            t_threshold=float(obj["t_threshold"]),
            df=int(obj["df"]),
            connectivity=Connectivity.parse(obj["connectivity"]),
            master_seed=int(obj["master_seed"]),
        )

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def pool_normalized_histograms(per_realization_extents):
    """Average per-realization normalized extent histograms, exactly.

    Parameters
    ----------
    per_realization_extents : sequence of sequences of int
        Cluster extents observed at each realization; an empty sequence
        marks a realization with no clusters (all mass at 0).

    Returns
    -------
    (mass, zero_cluster_fraction)
        ``mass`` as {extent: float}, summing to 1.
    """
    b = len(per_realization_extents)
    if b < 1:
        raise ValueError("need at least one realization")
    pooled = {}
    empties = 0
    for extents in per_realization_extents:
        if len(extents) == 0:
            empties += 1
            pooled[0] = pooled.get(0, Fraction(0)) + 1
            continue
        k_r = len(extents)
        for extent, count in extent_histogram_of(extents).items():
            pooled[extent] = pooled.get(extent, Fraction(0)) + Fraction(count, k_r)
    mass = {k: float(v / b) for k, v in pooled.items()}
    return mass, empties / b


def extent_histogram_of(extents):
    """Counts by extent for a plain extent sequence."""
    counts = {}
    for e in extents:
        e = int(e)
        if e < 1:
            raise ValueError(f"cluster extents must be >= 1, got {e}")
        counts[e] = counts.get(e, 0) + 1
    return counts


def _realization_extents(stack, cfg, t_threshold, r):
    signs = rng_sign_vector(cfg.master_seed, r, stack.n_subjects)
    tmap = one_sample_tmap(stack, signs)
    clusters = extract_clusters(tmap, stack.mask, t_threshold, cfg.connectivity)
    return [c.extent for c in clusters]


def build_null(stack, cfg, threads=1):
    """Run B sign-flip realizations and pool the extent null distribution.

    The observed (all +1) labeling is not among the B realizations.
    Worker count never changes the result: realizations are independent
    and the pooled histogram is an exact rational average.
    """
    df = stack.n_subjects - 1
    t_threshold = t_upper_quantile(cfg.cdt_p, df)
    indices = range(1, cfg.realizations + 1)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            extents = list(
                pool.map(lambda r: _realization_extents(stack, cfg, t_threshold, r), indices)
            )
    else:
        extents = [_realization_extents(stack, cfg, t_threshold, r) for r in indices]
    mass, zero_fraction = pool_normalized_histograms(extents)
    return ExtentNullDistribution(
        mass=mass,
        realizations=cfg.realizations,
        zero_cluster_fraction=zero_fraction,
        cdt_p=cfg.cdt_p,
        t_threshold=t_threshold,
        df=df,
        connectivity=cfg.connectivity,
        master_seed=cfg.master_seed,
    )


def null_pvalue(dist, extent):
    """Uncorrected p for an observed extent: tail mass P(S >= extent).

    A resampling p-value of exactly 0 is indefensible, so the tail is
    clamped below at 1/(B+1).
    """
    extent = int(extent)
    if extent < 1:
        raise ValueError(f"extent must be >= 1, got {extent}")
    tail = 0.0
    for k in sorted(dist.mass):
        if k >= extent:
            tail += dist.mass[k]
    floor = 1.0 / (dist.realizations + 1)
    return min(max(tail, floor), 1.0)


def analyze_contrast(stack, cfg, threads=1):
    """Full pipeline for one contrast: null build plus observed scoring.

    Returns
    -------
    (clusters, dist)
        Observed clusters (all +1 labeling) with ``p_uncorrected`` set,
        and the pooled ExtentNullDistribution.
    """
    dist = build_null(stack, cfg, threads=threads)
    signs = np.ones(stack.n_subjects, dtype=np.int64)
    tmap = one_sample_tmap(stack, signs)
    observed = extract_clusters(tmap, stack.mask, dist.t_threshold, cfg.connectivity)
    scored = [replace(c, p_uncorrected=null_pvalue(dist, c.extent)) for c in observed]
    return scored, dist
