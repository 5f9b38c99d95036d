"""Supra-threshold cluster extraction from t maps.

Voxels enter a cluster when t is strictly above the threshold; components
are formed under a configurable 3D connectivity. Cluster ordering is
pinned (extent descending, ties by ascending peak linear index) so CSV
outputs are diff-stable across runs and implementations.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimMismatchError


class Connectivity(enum.Enum):
    """3D neighborhood: shared faces, faces+edges, or faces+edges+corners."""

    FACES6 = "faces6"
    EDGES18 = "edges18"
    CORNERS26 = "corners26"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {
            "6": cls.FACES6,
            "18": cls.EDGES18,
            "26": cls.CORNERS26,
            "faces6": cls.FACES6,
            "edges18": cls.EDGES18,
            "corners26": cls.CORNERS26,
        }
        key = str(value).lower()
        if key not in aliases:
            raise ValueError(f"unknown connectivity {value!r}")
        return aliases[key]

    @property
    def structure(self):
        """3x3x3 boolean footprint for component labeling."""
        rank = {Connectivity.FACES6: 1, Connectivity.EDGES18: 2, Connectivity.CORNERS26: 3}
        return ndimage.generate_binary_structure(3, rank[self])

    @property
    def offsets(self):
        """Neighbor offsets (dx, dy, dz), excluding the center."""
        s = self.structure
        offs = [
            (dx, dy, dz)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0) and s[dx + 1, dy + 1, dz + 1]
        ]
        return tuple(offs)


@dataclass(frozen=True)
class Cluster:
    """One supra-threshold connected component.

    ``id`` is 1-based in the pinned ordering. ``p_uncorrected``,
    ``q_value`` and ``significant_fdr`` stay None until the permutation
    and FDR stages fill them in.
    """

    id: int
    extent: int
    peak_t: float
    peak_xyz: tuple
    peak_linear_index: int
    p_uncorrected: float = None
    q_value: float = None
    significant_fdr: bool = None


def extract_clusters(tmap, mask, t_threshold, conn):
    """Extract supra-threshold clusters of a t map.

    Parameters
    ----------
    tmap : TMap
    mask : Mask
    t_threshold : float
        Strict threshold: a voxel is supra-threshold iff t > t_threshold.
    conn : Connectivity

    Returns
    -------
    list of Cluster
        Sorted by extent descending, ties by ascending peak linear index;
        empty when no voxel passes.
    """
    if tmap.volume.dims != mask.dims:
        raise DimMismatchError(
            f"t map dims {tmap.volume.dims} differ from mask dims {mask.dims}"
        )
    if not np.isfinite(t_threshold):
        raise ValueError("t_threshold must be finite")

    t = tmap.volume.data
    supra = (t > t_threshold) & mask.inside
    labels, n_labels = ndimage.label(supra, structure=conn.structure)
    if n_labels == 0:
        return []

    # Work in x-fastest order so positions are linear indices.
    lab_flat = labels.ravel(order="F")
    t_flat = t.ravel(order="F")
    voxel_lin = np.flatnonzero(lab_flat)
    voxel_lab = lab_flat[voxel_lin]
    voxel_t = t_flat[voxel_lin]

    order = np.argsort(voxel_lab, kind="stable")  # groups labels, lin asc inside
    lab_s, t_s, lin_s = voxel_lab[order], voxel_t[order], voxel_lin[order]
    starts = np.searchsorted(lab_s, np.arange(1, n_labels + 1))
    ends = np.append(starts[1:], lab_s.size)
    extents = ends - starts
    peak_vals = np.maximum.reduceat(t_s, starts)

    # First (lowest linear index) voxel attaining the component maximum.
    at_max = np.flatnonzero(t_s == np.repeat(peak_vals, extents))
    first_at_max = at_max[np.searchsorted(at_max, starts)]
    peak_lin = lin_s[first_at_max]

    dims = tmap.volume.dims
    nx, ny = dims[0], dims[1]
    rank = np.lexsort((peak_lin, -extents))
    clusters = []
    for cid, j in enumerate(rank, start=1):
        lin = int(peak_lin[j])
        xyz = (lin % nx, (lin // nx) % ny, lin // (nx * ny))
        clusters.append(
            Cluster(
                id=cid,
                extent=int(extents[j]),
                peak_t=float(peak_vals[j]),
                peak_xyz=xyz,
                peak_linear_index=lin,
            )
        )
    return clusters


def extent_histogram(clusters):
    """Count clusters by extent; empty input gives an empty map."""
    return dict(Counter(c.extent for c in clusters))
