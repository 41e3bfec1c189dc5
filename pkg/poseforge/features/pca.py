"""
PCA projection of visual descriptors.

The projection is fitted once on the query object's visual descriptors and
applied unchanged to every target, so both branches share one subspace.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from poseforge.core.errors import RankDeficient
from poseforge.core.provenance import ProvenanceTracker

EIGEN_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class PcaProjection:
    """
    Mean-centred linear projection onto ``d_out`` principal directions.

    ``rank`` rows of ``basis`` are orthonormal principal directions; when the
    fitting data had fewer nonzero eigenvalues than ``d_out`` the remaining
    rows are zero.
    """

    mean: np.ndarray
    basis: np.ndarray
    d_out: int
    rank: int

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        basis = np.array(self.basis, dtype=np.float64)
        if basis.shape != (self.d_out, len(mean)):
            raise ValueError(f"basis shape {basis.shape} != ({self.d_out}, {len(mean)})")
        if self.d_out > len(mean):
            raise ValueError(f"d_out ({self.d_out}) exceeds input dimension ({len(mean)})")
        mean.setflags(write=False)
        basis.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)

    @property
    def d_in(self) -> int:
        return len(self.mean)

    def project(self, features) -> np.ndarray:
        """Project (M, D_vis) or (D_vis,) features."""
        features = np.asarray(features, dtype=np.float64)
        return (features - self.mean) @ self.basis.T


def fit_pca(
    features,
    d_out: int,
    provenance: Optional[ProvenanceTracker] = None,
    strict: bool = False,
) -> PcaProjection:
    """
    Fit a PCA projection with a deterministic sign convention.

    Parameters
    ----------
    features : array-like
        (M, D_vis) samples.
    d_out : int
        Output dimensionality.
    provenance : ProvenanceTracker, optional
        Receives a ``rank_deficient`` entry when fewer than ``d_out``
        nonzero eigenvalues exist.
    strict : bool
        Raise instead of zero-padding a rank-deficient fit.

    Returns
    -------
    PcaProjection
        Rows sorted by descending eigenvalue; the first nonzero entry of
        every row is positive. Missing directions are zero rows.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {features.shape}")
    m, d_in = features.shape
    if not 0 < d_out <= d_in:
        raise ValueError(f"d_out must lie in [1, {d_in}], got {d_out}")

    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / max(m - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    cutoff = EIGEN_RTOL * max(eigvals[0], 0.0)
    nonzero = int(np.sum(eigvals > cutoff)) if eigvals[0] > 0 else 0
    rank = min(d_out, nonzero, max(m - 1, 0))

    basis = np.zeros((d_out, d_in))
    basis[:rank] = eigvecs[:, :rank].T
    for row in basis[:rank]:
        lead = np.flatnonzero(np.abs(row) > 1e-12)
        if len(lead) and row[lead[0]] < 0:
            row *= -1.0

    if rank < d_out and strict:
        raise RankDeficient(f"Only {rank} nonzero principal directions, {d_out} requested")
    if rank < d_out and provenance is not None:
        provenance.log(
            step="features",
            action="rank_deficient",
            details={"requested": d_out, "rank": rank, "samples": m},
        )
    return PcaProjection(mean=mean, basis=basis, d_out=d_out, rank=rank)
