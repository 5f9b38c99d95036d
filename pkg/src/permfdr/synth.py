"""Synthetic smooth Gaussian-field stacks and Monte Carlo FDR validation.

Subjects are iid standard normal fields, smoothed by a separable
truncated Gaussian kernel, rescaled to unit empirical sd over the mask
(smoothing otherwise shrinks the variance by a kernel-dependent factor,
which would detach the CDT p-to-t conversion from the field), and
optionally spiked with a spherical signal.

Each (trial, subject) pair owns one RNG stream, so trials are
independent, order-free, and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .fdr import apply_fdr_to_clusters
from .permnull import analyze_contrast
from .stats import RngStream
from .volume import Volume, full_mask, stack_from_arrays

# Subject streams must never collide with the permutation realization
# streams 1..B, so they live above 2**32: index = (trial << 32) | subject.
_TRIAL_SHIFT = 32


@dataclass(frozen=True)
class SphereSignal:
    """Spherical activation: amplitude added inside the closed ball."""

    center: tuple
    radius: float
    amplitude: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    def contains(self, xyz):
        d2 = sum((float(a) - float(b)) ** 2 for a, b in zip(xyz, self.center))
        return d2 <= self.radius**2

    def indicator(self, dims):
        x, y, z = np.meshgrid(
            np.arange(dims[0]), np.arange(dims[1]), np.arange(dims[2]), indexing="ij"
        )
        d2 = (
            (x - self.center[0]) ** 2.0
            + (y - self.center[1]) ** 2.0
            + (z - self.center[2]) ** 2.0
        )
        return np.asfortranarray(d2 <= self.radius**2)


@dataclass(frozen=True)
class SynthConfig:
    """One synthetic stack: dims, subjects, smoothing, signal, seeding."""

    master_seed: int
    dims: tuple = (20, 20, 20)
    n_subjects: int = 20
    fwhm_vox: float = 2.0
    signal: SphereSignal | None = None
    trial_index: int = 1
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValueError(f"need at least 2 subjects, got {self.n_subjects}")
        if self.fwhm_vox < 0:
            raise ValueError(f"fwhm_vox must be >= 0, got {self.fwhm_vox}")
        if self.trial_index < 1:
            raise ValueError(f"trial_index must be >= 1, got {self.trial_index}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "master_seed", int(self.master_seed))


def gaussian_kernel_1d(fwhm_vox):
    """Discrete Gaussian, sigma = fwhm / sqrt(8 ln 2), cut at ceil(4 sigma)."""
    if fwhm_vox == 0:
        return np.ones(1, dtype=np.float64)
    sigma = fwhm_vox / math.sqrt(8.0 * math.log(2.0))
    radius = int(math.ceil(4.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def gaussian_smooth(volume, fwhm_vox):
    """Separable Gaussian smoothing with zero-padding; fwhm 0 is identity."""
    if fwhm_vox < 0:
        raise ValueError(f"fwhm_vox must be >= 0, got {fwhm_vox}")
    if fwhm_vox == 0:
        return volume
    kernel = gaussian_kernel_1d(fwhm_vox)
    data = volume.data
    for axis in range(3):
        data = ndimage.convolve1d(data, kernel, axis=axis, mode="constant", cval=0.0)
    return Volume(dims=volume.dims, voxel_size=volume.voxel_size, data=data)


def _subject_stream_index(trial_index, subject_index):
    return (trial_index << _TRIAL_SHIFT) | subject_index


def generate_subject_field(cfg, subject_index):
    """One subject volume: smoothed unit-sd noise plus the signal term."""
    dims = cfg.dims
    n_vox = dims[0] * dims[1] * dims[2]
    stream = RngStream(
        cfg.master_seed, _subject_stream_index(cfg.trial_index, subject_index)
    )
    noise = stream.normal_block(n_vox).reshape(dims, order="F")
    vol = gaussian_smooth(
        Volume(dims=dims, voxel_size=cfg.voxel_size, data=noise), cfg.fwhm_vox
    )
    data = vol.data
    sd = data.std()
    data = data / sd
    if cfg.signal is not None and cfg.signal.amplitude != 0.0:
        data = data + cfg.signal.amplitude * cfg.signal.indicator(dims)
    return Volume(dims=dims, voxel_size=cfg.voxel_size, data=data)


def generate_stack(cfg):
    """Full-volume-mask SubjectStack of n_subjects synthetic fields."""
    subjects = [
        generate_subject_field(cfg, s).data for s in range(cfg.n_subjects)
    ]
    return stack_from_arrays(
        subjects, mask=full_mask(cfg.dims), voxel_size=cfg.voxel_size
    )


@dataclass(frozen=True)
class TrialOutcome:
    """FDR bookkeeping of one trial.

    A discovery is false when its peak lies outside the signal region;
    with no signal configured every discovery is false.
    """

    trial_index: int
    discoveries: int
    false_discoveries: int

    @property
    def fdp(self):
        return self.false_discoveries / max(self.discoveries, 1)


@dataclass(frozen=True)
class TrialAggregate:
    trials: int
    alpha_fdr: float
    mean_fdp: float
    any_rejection_fraction: float
    ci95: tuple


def wilson_interval(successes, n, z=1.959963984540054):
    """Wilson score interval for a binomial proportion (95% default)."""
    if n < 1:
        raise ValueError("need n >= 1")
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def run_trial(cfg, perm_cfg, threads=1):
    """Generate one stack, run the pipeline, tally FDR discoveries."""
    stack = generate_stack(cfg)
    clusters, _ = analyze_contrast(stack, perm_cfg, threads=threads)
    scored = apply_fdr_to_clusters(clusters, perm_cfg.alpha_fdr)
    discoveries = [c for c in scored if c.significant_fdr]
    if cfg.signal is None:
        false = len(discoveries)
    else:
        false = sum(1 for c in discoveries if not cfg.signal.contains(c.peak_xyz))
    return TrialOutcome(
        trial_index=cfg.trial_index,
        discoveries=len(discoveries),
        false_discoveries=false,
    )


def run_trials(cfg_template, trials, perm_cfg, threads=1, progress=None):
    """Run `trials` independent trials; trial t uses trial_index = t.

    Returns (outcomes, aggregate). `progress`, if given, is called with
    each completed TrialOutcome.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    outcomes = []
    for t in range(1, trials + 1):
        outcome = run_trial(replace(cfg_template, trial_index=t), perm_cfg, threads)
        outcomes.append(outcome)
        if progress is not None:
            progress(outcome)
    return outcomes, aggregate_outcomes(outcomes, perm_cfg.alpha_fdr)


def aggregate_outcomes(outcomes, alpha_fdr):
    n = len(outcomes)
    any_hits = sum(1 for o in outcomes if o.discoveries > 0)
    mean_fdp = sum(o.fdp for o in outcomes) / n
    return TrialAggregate(
        trials=n,
        alpha_fdr=float(alpha_fdr),
        mean_fdp=mean_fdp,
        any_rejection_fraction=any_hits / n,
        ci95=wilson_interval(any_hits, n),
    )
