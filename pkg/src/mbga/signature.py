"""Per-point cubic-surface shape signature and signature-driven mass boosting.

For every point a local neighborhood is gathered from a per-cloud tree, a
bivariate cubic z = f(x, y) is fitted in the neighborhood's PCA frame, and the
descriptor is the combined magnitude of the two pure cubic coefficients. High
descriptor values mark curvature-rich regions worth extra alignment weight.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bhtree import BHTree, build
from .core import PointCloud
from .errors import IllConditioned, TooFewPoints

MIN_NEIGHBORS = 12  # the fit has 10 unknowns; keep it overdetermined
MAX_NEIGHBORS = 32  # keep the fit local on sparse clouds
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SurfaceFit:
    """Least-squares cubic patch z = f(x, y) in a local frame."""

    coefficients: np.ndarray  # a1..a10
    neighborhood_size: int
    condition: float

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=np.float64).reshape(10)
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", a)


def _design_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # columns follow the coefficient order a1..a10:
    # 1, x, y, xy, x^2, y^2, x^3, x^2 y, x y^2, y^3
    return np.stack([np.ones_like(x), x, y, x * y, x * x, y * y,
                     x ** 3, x * x * y, x * y * y, y ** 3], axis=1)


def local_neighborhood(cloud: PointCloud, i: int, theta: float = 16.0,
                       tree: Optional[BHTree] = None) -> np.ndarray:
    """The closest points around cloud.points[i] that a theta-traversal
    resolves individually (at most 32, nearest first).

    theta is doubled (at most 4 times) while fewer than 12 points come back;
    if that still falls short the 12 nearest points are returned instead.
    """
    if cloud.n < MIN_NEIGHBORS:
        raise TooFewPoints(f"need at least {MIN_NEIGHBORS} points, have {cloud.n}")
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not 0 <= i < cloud.n:
        raise IndexError(f"point index {i} out of range")
    if tree is None:
        tree = build([cloud])
    q = cloud.points[i]
    t = float(theta)
    for _ in range(5):
        pos, _ = tree.fetch_leaf_points(q, t)
        if pos.shape[0] >= MIN_NEIGHBORS:
            if pos.shape[0] > MAX_NEIGHBORS:
                d2 = np.sum((pos - q) ** 2, axis=1)
                pos = pos[np.argsort(d2, kind="stable")[:MAX_NEIGHBORS]]
            return pos
        t *= 2.0
    d2 = np.sum((cloud.points - q) ** 2, axis=1)
    nearest = np.argsort(d2, kind="stable")[:MIN_NEIGHBORS]
    return cloud.points[nearest].copy()


def fit_cubic_surface(neighborhood: np.ndarray) -> SurfaceFit:
    """Least-squares cubic through local-frame points (columns x, y, z)."""
    pts = np.asarray(neighborhood, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"neighborhood must be (K, 3), got {pts.shape}")
    k = pts.shape[0]
    if k < MIN_NEIGHBORS:
        raise TooFewPoints(f"need at least {MIN_NEIGHBORS} points, have {k}")
    A = _design_matrix(pts[:, 0], pts[:, 1])
    ata = A.T @ A
    atz = A.T @ pts[:, 2]
    cond = float(np.linalg.cond(ata))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditioned(f"normal equations condition {cond:.3g} exceeds {COND_LIMIT:.0e}")
    coeff = np.linalg.solve(ata, atz)
    return SurfaceFit(coeff, k, cond)


def shape_descriptor(fit: SurfaceFit) -> float:
    """Combined magnitude of the pure cubic terms x^3 and y^3."""
    return float(abs(fit.coefficients[6]) + abs(fit.coefficients[9]))


def _local_frame(neighborhood: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Express neighbors in the PCA frame: origin at the query, z along the
    direction of least variance (the local surface normal)."""
    centered = neighborhood - neighborhood.mean(axis=0)
    cov = centered.T @ centered / max(neighborhood.shape[0], 1)
    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    frame = vecs[:, ::-1]  # x = largest variance, z = smallest
    return (neighborhood - origin) @ frame


def compute_descriptors(cloud: PointCloud, theta: float = 16.0) -> np.ndarray:
    """Shape descriptor per point; ill-conditioned fits fall back to 0."""
    if cloud.dim != 3:
        raise ValueError("shape signatures are defined for 3D clouds")
    tree = build([cloud])
    out = np.zeros(cloud.n)
    for i in range(cloud.n):
        nb = local_neighborhood(cloud, i, theta, tree=tree)
        local = _local_frame(nb, cloud.points[i])
        try:
            out[i] = shape_descriptor(fit_cubic_surface(local))
        except IllConditioned:
            out[i] = 0.0
    return out


def masses_from_signature(cloud: PointCloud, descriptors: np.ndarray,
                          boost: float = 10.0, quantile: float = 0.9) -> PointCloud:
    """Boost the masses of points whose descriptor is strictly above the
    given quantile of the cloud's descriptor distribution."""
    desc = np.asarray(descriptors, dtype=np.float64).reshape(-1)
    if desc.shape[0] != cloud.n:
        raise ValueError("one descriptor per point required")
    if boost <= 0:
        raise ValueError("boost must be positive")
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    cut = np.quantile(desc, quantile)
    masses = cloud.masses.copy()
    masses[desc > cut] *= boost
    return cloud.with_masses(masses)
