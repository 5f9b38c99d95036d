"""Estimator-style front end over the permutation FDR pipeline.

PermutationClusterFdr follows the scikit-learn conventions: constructor
stores parameters verbatim, fit() learns the extent null distribution
and the scored cluster table from a stack of subject volumes, and
predict() maps cluster extents to uncorrected permutation p-values
under the fitted null. get_params/set_params/clone work as usual.

The one deliberate departure: random_state has no usable default.
Every stochastic run must be explicitly seeded, so fit() refuses
random_state=None instead of falling back to global entropy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .fdr import apply_fdr_to_clusters
from .permnull import PermutationConfig, analyze_contrast, null_pvalue
from .stats import one_sample_tmap
from .volume import Mask, SubjectStack, full_mask, stack_from_arrays


def check_subject_array(X):
    """Validate a subject stack given as an array: 4D, finite, N >= 2."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(
            f"expected a 4D array (n_subjects, nx, ny, nz), got shape {X.shape}"
        )
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 subjects, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("subject volumes must be finite")
    return X


def check_mask_array(mask, dims):
    """Validate a boolean mask array against the volume dims."""
    inside = np.asarray(mask).astype(bool)
    if inside.shape != tuple(dims):
        raise ValueError(f"mask shape {inside.shape} does not match volumes {tuple(dims)}")
    return inside


class PermutationClusterFdr(BaseEstimator):
    """Cluster-level inference by sign-flip permutation with BH-FDR.

    Parameters
    ----------
    realizations : int, number of sign-flip realizations (B).
    cdt_p : float, cluster-defining threshold as an upper-tail p.
    connectivity : str, one of "faces6", "edges18", "corners26" (or
        "6"/"18"/"26").
    alpha_fdr : float, FDR level for the cluster decisions.
    random_state : int, master seed; mandatory, there is no default
        entropy source.
    threads : int, worker cap for the realization loop; never changes
        the result.

    Attributes (after fit)
    ----------
    clusters_ : list of Cluster, scored with p, q and the FDR decision,
        ordered by extent descending.
    null_distribution_ : ExtentNullDistribution.
    tmap_ : Volume, the observed one-sample t map.
    df_ : int. t_threshold_ : float. n_rejected_ : int.
    """

    def __init__(
        self,
        realizations=5000,
        cdt_p=0.001,
        connectivity="corners26",
        alpha_fdr=0.05,
        random_state=None,
        threads=1,
    ):
        self.realizations = realizations
        self.cdt_p = cdt_p
        self.connectivity = connectivity
        self.alpha_fdr = alpha_fdr
        self.random_state = random_state
        self.threads = threads

    def _to_stack(self, X, mask, voxel_size):
        if isinstance(X, SubjectStack):
            if mask is not None:
                raise ValueError("pass the mask inside the SubjectStack, not both")
            return X
        X = check_subject_array(X)
        dims = X.shape[1:]
        if mask is None:
            m = full_mask(dims)
        else:
            m = Mask(dims=dims, inside=check_mask_array(mask, dims))
        return stack_from_arrays(list(X), mask=m, voxel_size=voxel_size)

    def fit(self, X, y=None, mask=None, voxel_size=(1.0, 1.0, 1.0)):
        """Learn the extent null and score the observed clusters.

        X is a SubjectStack or a 4D array (n_subjects, nx, ny, nz);
        y is ignored and accepted for interface compatibility.
        """
        if self.random_state is None:
            raise ValueError(
                "random_state must be an explicit integer seed; "
                "unseeded permutation runs are not reproducible"
            )
        stack = self._to_stack(X, mask, voxel_size)
        cfg = PermutationConfig(
            master_seed=self.random_state,
            realizations=self.realizations,
            cdt_p=self.cdt_p,
            connectivity=self.connectivity,
            alpha_fdr=self.alpha_fdr,
        )
        clusters, dist = analyze_contrast(stack, cfg, threads=self.threads)
        scored = apply_fdr_to_clusters(clusters, cfg.alpha_fdr)
        observed = one_sample_tmap(stack, np.ones(stack.n_subjects, dtype=np.int64))
        self.clusters_ = scored
        self.null_distribution_ = dist
        self.tmap_ = observed.volume
        self.df_ = dist.df
        self.t_threshold_ = dist.t_threshold
        self.n_rejected_ = sum(1 for c in scored if c.significant_fdr)
        return self

    def _check_fitted(self):
        if not hasattr(self, "null_distribution_"):
            raise NotFittedError(
                "this PermutationClusterFdr instance is not fitted yet; "
                "call fit before predict"
            )

    def predict(self, X):
        """Uncorrected permutation p-values for an array of extents."""
        self._check_fitted()
        extents = np.asarray(X)
        if extents.ndim != 1:
            raise ValueError(f"expected a 1D array of extents, got shape {extents.shape}")
        return np.array(
            [null_pvalue(self.null_distribution_, int(e)) for e in extents],
            dtype=np.float64,
        )

    def significant_clusters(self):
        """The FDR-significant subset of clusters_, in cluster order."""
        self._check_fitted()
        return [c for c in self.clusters_ if c.significant_fdr]
