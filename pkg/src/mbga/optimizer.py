"""Alternating Huber-robust nonlinear least-squares alignment of L rigid poses.

Outer loop: pose all clouds, build one joint tree, then sweep the sets in
ascending label order. Per set, the clusters fetched from the (stale) tree
stay fixed while one or two damped Gauss-Newton steps update a small delta
transform initialized at identity; the delta is then composed onto the
set's pose. Convergence is measured on the tree energy, never the exact one.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels as K
from .bhtree import build, morton_order
from .core import (PointCloud, RigidTransform, apply_transform, compose,
                   axis_angle_to_matrix, rotation_matrix_2d, rotation_jacobians)
from .energy import ResidualTerm, gpe_tree
from .errors import EmptyInput, DimensionMismatch, NonFiniteEnergy

logger = logging.getLogger(__name__)

_TINY = 1e-300
_DIAG_FLOOR = 1e-12  # relative to max diagonal, keeps damping scale-free


@dataclass(frozen=True)
class AlignConfig:
    theta: float = 12.0
    huber_eps: float = 1e-3
    max_outer_iters: int = 100
    inner_lm_iters: int = 2
    gpe_rel_tol: float = 1e-6
    depth_cap: int = 20
    center_clouds_first: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if not (1e-4 <= self.huber_eps <= 0.1):
            raise ValueError("huber_eps must lie in [1e-4, 0.1]")
        if self.inner_lm_iters not in (1, 2):
            raise ValueError("inner_lm_iters must be 1 or 2")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.gpe_rel_tol <= 0:
            raise ValueError("gpe_rel_tol must be positive")


@dataclass
class AlignResult:
    transforms: List[RigidTransform]
    gpe_trace: List[float]
    outer_iterations: int
    converged: bool
    wall_time: float


@dataclass
class LMDamping:
    """Damping factor carried across retries; scaled by the diagonal of J^T J."""

    lam: float = 1e-4


def _params_to_transform(params: np.ndarray, dim: int) -> RigidTransform:
    if dim == 2:
        return RigidTransform(params[:1], params[1:3])
    return RigidTransform(params[:3], params[3:6])


def _n_params(dim: int) -> int:
    return 3 if dim == 2 else 6


def _pose_pieces(params: np.ndarray, dim: int):
    """Rotation matrix, translation and rotation-derivative matrices at params."""
    if dim == 2:
        R = rotation_matrix_2d(float(params[0]))
        t = params[1:3]
        dR = rotation_jacobians(params[:1], 2)
    else:
        R = axis_angle_to_matrix(params[:3])
        t = params[3:6]
        dR = rotation_jacobians(params[:3], 3)
    return R, t, dR


class _TreeEvaluator:
    """Huber cost / normal equations of one set's residuals against fixed clusters."""

    def __init__(self, tree, exclude: int, qpts: np.ndarray, wq: np.ndarray,
                 theta: float, eps: float):
        self.kernel = K.get_accumulator(tree.dim)
        self.rem_mass, self.rem_com = K.shadow_aggregates(
            tree.state, tree.set_mass, tree.set_wpos, tree.n_nodes, exclude)
        self.tree = tree
        # Morton order keeps each kernel group spatially tight
        perm = morton_order(qpts)
        self.qpts = np.ascontiguousarray(np.asarray(qpts)[perm])
        self.wq = np.ascontiguousarray(np.asarray(wq)[perm])
        self.theta = float(theta)
        self.eps = float(eps)
        self.dim = tree.dim
        self.prot = 3 if tree.dim == 3 else 1

    def __call__(self, params: np.ndarray, want_grad: bool):
        R, t, dR = _pose_pieces(params, self.dim)
        moved = self.qpts @ R.T + t
        if want_grad:
            rotjac = np.ascontiguousarray(np.einsum("kab,ib->ika", dR, self.qpts))
        else:
            rotjac = np.zeros((1, self.prot, self.dim))
        oc, oraw, ojtj, ojtr = self.kernel(
            self.tree.children, self.tree.half, self.tree.state,
            self.rem_mass, self.rem_com, self.qpts, moved, rotjac, self.wq,
            self.theta, self.eps, want_grad)
        cost = float(oc.sum())
        raw = float(oraw.sum())
        if want_grad:
            jtj = ojtj.sum(axis=0)
            jtj = jtj + np.tril(jtj, -1).T  # kernel fills the lower triangle
            return cost, raw, jtj, ojtr.sum(axis=0)
        return cost, raw, None, None


class _TermsEvaluator:
    """Same contract as _TreeEvaluator but over an explicit ResidualTerm list."""

    def __init__(self, terms: Sequence[ResidualTerm], eps: float):
        if not terms:
            raise EmptyInput("residual term list is empty")
        self.pts = np.array([t.point_world for t in terms], dtype=np.float64)
        self.cl = np.array([t.cluster.position for t in terms], dtype=np.float64)
        self.w = np.array([t.weight for t in terms], dtype=np.float64)
        self.eps = float(eps)
        self.dim = self.pts.shape[1]

    def __call__(self, params: np.ndarray, want_grad: bool):
        R, t, dR = _pose_pieces(params, self.dim)
        moved = self.pts @ R.T + t
        diff = moved - self.cl
        dist = np.linalg.norm(diff, axis=1)
        psi = np.minimum(dist, self.eps)
        cost = float(self.w @ (0.5 * psi ** 2 + self.eps * (dist - psi)))
        raw = float(self.w @ dist)
        if not want_grad:
            return cost, raw, None, None
        safe = np.maximum(dist, _TINY)
        n = diff / safe[:, None]
        rot_rows = np.einsum("kab,ib->ika", dR, self.pts)
        jac = np.concatenate([np.einsum("id,ikd->ik", n, rot_rows), n], axis=1)
        # IRLS form: grad = J^T (w psi), Gauss-Newton hessian = J^T diag(w u) J
        jtr = jac.T @ (self.w * psi)
        u = psi / safe
        jtj = (jac * (self.w * u)[:, None]).T @ jac
        return cost, raw, jtj, jtr


def _lm_single_step(eval_fn, params: np.ndarray, state: LMDamping,
                    cur: Tuple[float, float, np.ndarray, np.ndarray],
                    grad_for_next: bool, max_retries: int = 8):
    """One damped Gauss-Newton step; accepted iff the Huber cost decreases.

    Returns (params, cur, accepted). ``cur`` is the (cost, raw, jtj, jtr)
    bundle at the returned params; jtj/jtr may be None when grad_for_next is
    False. On failure after the retry budget the incoming params are kept.
    """
    cost0, _, jtj, jtr = cur
    if not np.isfinite(cost0):
        raise NonFiniteEnergy(f"non-finite cost {cost0}")
    diag = np.diag(jtj).copy()
    dmax = diag.max()
    if dmax <= 0:
        return params, cur, False  # no gradient information at all
    diag = np.maximum(diag, _DIAG_FLOOR * dmax)
    for _ in range(max_retries + 1):
        try:
            step = np.linalg.solve(jtj + state.lam * np.diag(diag), -jtr)
        except np.linalg.LinAlgError:
            state.lam *= 10.0
            continue
        if not np.all(np.isfinite(step)):
            state.lam *= 10.0
            continue
        cand = params + step
        cand_eval = eval_fn(cand, grad_for_next)
        if not np.isfinite(cand_eval[0]):
            raise NonFiniteEnergy("non-finite cost at candidate step")
        if cand_eval[0] < cost0:
            state.lam = max(state.lam / 3.0, 1e-15)
            return cand, cand_eval, True
        state.lam *= 10.0
    return params, cur, False


def lm_step(residual_terms: Sequence[ResidualTerm], current_delta: RigidTransform,
            damping_state: Optional[LMDamping] = None, huber_eps: float = 1e-3,
            ) -> Tuple[RigidTransform, LMDamping]:
    """One Levenberg-Marquardt step on the delta transform over explicit terms."""
    state = damping_state if damping_state is not None else LMDamping()
    ev = _TermsEvaluator(residual_terms, huber_eps)
    dim = ev.dim
    if current_delta.dim != dim:
        raise DimensionMismatch("delta transform dimension does not match terms")
    params = np.concatenate([current_delta.rotation, current_delta.translation])
    cur = ev(params, True)
    params, _, _ = _lm_single_step(ev, params, state, cur, grad_for_next=False)
    return _params_to_transform(params, dim), state


def align(clouds: Sequence[PointCloud], config: AlignConfig = AlignConfig()) -> AlignResult:
    """Simultaneously align all clouds; returns poses in the initial world frame."""
    if len(clouds) < 2:
        raise EmptyInput("need at least two clouds")
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise DimensionMismatch(f"clouds disagree on dimension: {sorted(dims)}")
    dim = dims.pop()
    n_sets = len(clouds)
    p = _n_params(dim)
    t_start = time.perf_counter()

    transforms = [RigidTransform.identity(dim) for _ in clouds]
    if config.center_clouds_first:
        centroids = [c.centroid() for c in clouds]
        common = np.mean(centroids, axis=0)
        rot0 = np.zeros(3 if dim == 3 else 1)
        transforms = [RigidTransform(rot0, common - c) for c in centroids]

    trace: List[float] = []
    converged = False
    it = 0
    prev_energy = None
    snapshot = list(transforms)
    lam = [1e-4] * n_sets  # carried across sweeps, the outer trust-region state
    rejects = 0
    retrying = False
    for it in range(1, config.max_outer_iters + 1):
        world = [apply_transform(T, c) for c, T in zip(clouds, transforms)]
        tree = build(world, depth_cap=config.depth_cap)
        # every set solves against this same tree and its own sweep-start pose,
        # so the per-set identity evaluations both score the configuration
        # entering the sweep and seed each solve
        evs = [_TreeEvaluator(tree, l, world[l].points, clouds[l].masses,
                              config.theta, config.huber_eps)
               for l in range(n_sets)]
        cur0 = [ev(np.zeros(p), True) for ev in evs]
        energy_now = sum(c[1] for c in cur0)
        if not np.isfinite(energy_now):
            raise NonFiniteEnergy(f"non-finite energy at iter {it}")
        if prev_energy is not None and not retrying:
            if abs(energy_now - prev_energy) / max(abs(prev_energy), _TINY) < config.gpe_rel_tol:
                if energy_now > prev_energy:
                    transforms = list(snapshot)
                converged = True
                trace.append(min(energy_now, prev_energy))
                break
            if energy_now > prev_energy:
                # the previous sweep overshot: revert it and redo it, stiffer
                logger.info("iter=%d gpe=%.9g rejected (prev %.9g), lam*=10",
                            it, energy_now, prev_energy)
                transforms = list(snapshot)
                lam = [x * 10.0 for x in lam]
                rejects += 1
                if rejects > 8:
                    # no damping admits a descent sweep: energy is stationary
                    converged = True
                    break
                retrying = True
                continue
        in_retry = retrying
        if not retrying:
            rejects = 0
            trace.append(energy_now)
            snapshot = list(transforms)
            prev_energy = energy_now
        retrying = False
        max_step = 0.0
        for l in range(n_sets):
            params = np.zeros(p)
            cur = cur0[l]
            damping = LMDamping(lam[l])
            for k in range(config.inner_lm_iters):
                need_grad = k < config.inner_lm_iters - 1
                params, cur, accepted = _lm_single_step(
                    evs[l], params, damping, cur, grad_for_next=need_grad)
                if not accepted:
                    break
            # retried sweeps may not relax the damping, or rejection cycles
            # would never terminate
            new_lam = min(max(damping.lam, 1e-12), 1e12)
            lam[l] = max(lam[l], new_lam) if in_retry else new_lam
            transforms[l] = compose(_params_to_transform(params, dim), transforms[l])
            max_step = max(max_step, float(np.linalg.norm(params)))
        logger.info("iter=%d gpe=%.9g set_updates=%d max_step=%.3g",
                    it, energy_now, n_sets, max_step)

    if not converged:
        # the last sweep's moves were never scored; keep them only if they help
        final_energy = gpe_tree(clouds, transforms, config.theta, config.depth_cap)
        if prev_energy is not None and final_energy > prev_energy:
            transforms = list(snapshot)
        else:
            trace.append(final_energy)

    return AlignResult(transforms=transforms, gpe_trace=trace,
                       outer_iterations=it, converged=converged,
                       wall_time=time.perf_counter() - t_start)


def extract_correspondences(clouds: Sequence[PointCloud],
                            transforms: Sequence[RigidTransform],
                            radius: float) -> List[Tuple[int, int, int, int]]:
    """Mutual nearest neighbours across set pairs within ``radius``, deduplicated."""
    if radius <= 0:
        return []
    world = [apply_transform(T, c.points) for c, T in zip(clouds, transforms)]
    kdtrees = [cKDTree(w) for w in world]
    matches: List[Tuple[int, int, int, int]] = []
    for a in range(len(clouds)):
        for b in range(a + 1, len(clouds)):
            d_ab, j_ab = kdtrees[b].query(world[a], distance_upper_bound=radius)
            d_ba, j_ba = kdtrees[a].query(world[b], distance_upper_bound=radius)
            for i in range(world[a].shape[0]):
                j = j_ab[i]
                if j < world[b].shape[0] and np.isfinite(d_ab[i]) and j_ba[j] == i:
                    matches.append((a, i, b, int(j)))
    return matches
