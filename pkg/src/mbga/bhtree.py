"""Joint 2^D-tree over the union of point sets with per-set mass shadowing.

One tree is built per outer optimizer iteration on all (currently posed)
clouds. Every node carries per-set mass and mass-weighted position
accumulators, so excluding the querying set happens at fetch time by
subtracting that set's contribution -- no rebuild per set.
"""
from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels as K
from .core import PointCloud
from .errors import DimensionMismatch, EmptyInput

DEFAULT_DEPTH_CAP = 20


class Cluster(NamedTuple):
    """An aggregated tree node: total remaining mass at its centre of mass."""

    position: np.ndarray
    mass: float


class BHTree:
    """Immutable after build; fetches are read-only and thread-safe."""

    def __init__(self, arrays, n_nodes, n_sets, dim, depth_cap, points, masses, labels):
        (self.children, self.center, self.half, self.state, self.depth,
         self.npts, self.set_mass, self.set_wpos, self.leaf_pos,
         self.leaf_mass, self.leaf_set, self.leaf_pt) = arrays
        self.n_nodes = n_nodes
        self.n_sets = n_sets
        self.dim = dim
        self.depth_cap = depth_cap
        self.points = points
        self.masses = masses
        self.labels = labels

    # -- queries ----------------------------------------------------------

    def fetch_arrays(self, q, exclude_set: Optional[int], theta: float):
        """Cluster (positions, masses) for one query point."""
        if theta <= 0:
            raise ValueError("theta must be positive")
        q = np.asarray(q, dtype=np.float64).reshape(self.dim)
        exclude = -1 if exclude_set is None else int(exclude_set)
        cap = int(self.npts[0])
        out_pos = np.empty((cap, self.dim))
        out_mass = np.empty(cap)
        n = K.fetch_clusters_impl(self.children, self.center, self.half, self.state,
                                  self.set_mass, self.set_wpos, q, exclude,
                                  float(theta), out_pos, out_mass)
        return out_pos[:n].copy(), out_mass[:n].copy()

    def fetch_clusters(self, q, exclude_set: Optional[int], theta: float) -> List[Cluster]:
        pos, mass = self.fetch_arrays(q, exclude_set, theta)
        return [Cluster(pos[i], float(mass[i])) for i in range(mass.shape[0])]

    def fetch_leaf_points(self, q, theta: float):
        """(positions, point indices) of the individually resolved points a
        theta-traversal returns around q; bucket entries carry index -1."""
        if theta <= 0:
            raise ValueError("theta must be positive")
        q = np.asarray(q, dtype=np.float64).reshape(self.dim)
        cap = int(self.npts[0])
        out_pos = np.empty((cap, self.dim))
        out_idx = np.empty(cap, np.int64)
        n = K.fetch_leaves_impl(self.children, self.center, self.half, self.state,
                                self.set_mass, self.set_wpos, self.leaf_pos, q,
                                float(theta), out_pos, out_idx, self.leaf_pt)
        return out_pos[:n].copy(), out_idx[:n].copy()

    def count_clusters(self, q, exclude_set: Optional[int], theta: float) -> int:
        q = np.asarray(q, dtype=np.float64).reshape(self.dim)
        exclude = -1 if exclude_set is None else int(exclude_set)
        return int(K.count_clusters(self.children, self.center, self.half, self.state,
                                     self.set_mass, self.set_wpos, q, exclude,
                                     float(theta)))

    # -- introspection ----------------------------------------------------

    def total_mass(self, exclude_set: Optional[int] = None) -> float:
        m = float(self.set_mass[0].sum())
        if exclude_set is not None:
            m -= float(self.set_mass[0, exclude_set])
        return m

    def max_depth(self) -> int:
        return int(self.depth[:self.n_nodes].max())

    def leaf_nodes(self) -> np.ndarray:
        st = self.state[:self.n_nodes]
        return np.nonzero((st == K.STATE_LEAF) | (st == K.STATE_BUCKET))[0]

    def dump(self) -> str:
        """Line-oriented debug dump: node id, depth, state, cell, per-set masses."""
        names = {K.STATE_LEAF: "leaf", K.STATE_INTERNAL: "internal",
                 K.STATE_BUCKET: "bucket"}
        lines = []
        for n in range(self.n_nodes):
            cell = " ".join(f"{c:.9g}" for c in self.center[n])
            masses = " ".join(f"{m:.9g}" for m in self.set_mass[n])
            lines.append(f"node={n} depth={self.depth[n]} state={names[self.state[n]]} "
                         f"center={cell} half={self.half[n]:.9g} npts={self.npts[n]} "
                         f"set_mass={masses}")
        return "\n".join(lines) + "\n"


def morton_order(points: np.ndarray) -> np.ndarray:
    """Permutation sorting points along a Morton (Z-order) curve.

    Spatially coherent query order keeps group traversals tight; the energy
    and normal-equation sums themselves are order-independent.
    """
    pts = np.asarray(points, dtype=np.float64)
    n, dim = pts.shape
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span <= 0] = 1.0
    bits = 21 if dim == 3 else 31
    top = (1 << bits) - 1
    q = np.minimum(((pts - lo) / span * top).astype(np.uint64), np.uint64(top))
    key = np.zeros(n, np.uint64)
    one = np.uint64(1)
    for b in range(bits):
        for d in range(dim):
            key |= ((q[:, d] >> np.uint64(b)) & one) << np.uint64(dim * b + d)
    return np.argsort(key, kind="stable")


def _root_cell(points: np.ndarray):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float((hi - lo).max())
    scale = max(extent, float(np.abs(center).max()), 1e-12)
    half = 0.5 * extent * (1.0 + 1e-6) + 1e-9 * scale
    return center, half


def build(clouds: Sequence[PointCloud], depth_cap: int = DEFAULT_DEPTH_CAP) -> BHTree:
    """Build one joint tree over all clouds in their current world pose."""
    if depth_cap < 1:
        raise ValueError("depth_cap must be >= 1")
    if not clouds:
        raise EmptyInput("no clouds given")
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise DimensionMismatch(f"clouds disagree on dimension: {sorted(dims)}")
    dim = dims.pop()
    points = np.vstack([c.points for c in clouds])
    masses = np.concatenate([c.masses for c in clouds])
    labels = np.concatenate([np.full(c.n, i, np.int32) for i, c in enumerate(clouds)])
    if points.shape[0] == 0:
        raise EmptyInput("no points")
    center, half = _root_cell(points)
    cap = 2 * points.shape[0] + 64
    while True:
        arrays = K.build_tree(points, masses, labels, len(clouds), int(depth_cap),
                              center, half, cap)
        n_nodes = arrays[-1]
        if n_nodes >= 0:
            break
        cap *= 2
        if cap > 200_000_000:
            raise MemoryError("tree capacity runaway")
    arrays = _dfs_remap(arrays[:-1], n_nodes)
    return BHTree(arrays, n_nodes, len(clouds), dim, int(depth_cap),
                  points, masses, labels)


def _dfs_remap(arrays, n_nodes):
    """Reorder node arrays depth-first so traversals walk memory forward."""
    (children, center, half, state, depth, npts, set_mass, set_wpos,
     leaf_pos, leaf_mass, leaf_set, leaf_pt) = arrays
    order = K.dfs_order(children, n_nodes)
    inv = np.empty(n_nodes + 1, np.int64)
    inv[-1] = -1  # maps child slot -1 to -1
    inv[order] = np.arange(n_nodes)
    children = inv[children[order]]
    return (np.ascontiguousarray(children), center[order].copy(), half[order].copy(),
            state[order].copy(), depth[order].copy(), npts[order].copy(),
            set_mass[order].copy(), set_wpos[order].copy(), leaf_pos[order].copy(),
            leaf_mass[order].copy(), leaf_set[order].copy(), leaf_pt[order].copy())
