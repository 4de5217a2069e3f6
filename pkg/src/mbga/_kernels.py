"""Numba kernels for the spatial tree and residual accumulation.

The tree lives in flat preallocated arrays so both the build and the
theta-controlled traversals run as nopython code. Node states:
0 = unused slot, 1 = single-point leaf, 2 = internal, 3 = depth-cap bucket
(near-duplicate points merged into one leaf).
"""
import os
from functools import lru_cache

import numpy as np
from numba import njit, prange

try:
    from numba import set_num_threads, config as _numba_config

    _t = os.environ.get("MBGA_THREADS", "")
    if _t.strip() and int(_t) > 0:
        set_num_threads(min(int(_t), _numba_config.NUMBA_NUM_THREADS))
except (ImportError, ValueError):
    pass

STATE_UNUSED = 0
STATE_LEAF = 1
STATE_INTERNAL = 2
STATE_BUCKET = 3

_STACK = 4096  # DFS stack bound: depth_cap * (2^D - 1) + 1 plus slack
_GROUP = 64  # queries per shared traversal; also the deterministic reduction chunk
_BUF = 8192  # staged-cluster buffer; flushed in segments when exceeded


@njit(cache=True)
def build_tree(points, masses, labels, n_sets, depth_cap, root_center, root_half, cap):
    """Insert all points into a 2^D-tree. Returns n_nodes = -1 on capacity overflow."""
    m_total, dim = points.shape
    nchild = 1 << dim
    children = np.full((cap, nchild), -1, np.int64)
    center = np.zeros((cap, dim))
    half = np.zeros(cap)
    state = np.zeros(cap, np.int8)
    depth = np.zeros(cap, np.int32)
    npts = np.zeros(cap, np.int64)
    set_mass = np.zeros((cap, n_sets))
    set_wpos = np.zeros((cap, n_sets, dim))
    leaf_pos = np.zeros((cap, dim))
    leaf_mass = np.zeros(cap)
    leaf_set = np.full(cap, -1, np.int32)
    leaf_pt = np.full(cap, -1, np.int64)

    for d in range(dim):
        center[0, d] = root_center[d]
    half[0] = root_half
    n_nodes = 1

    for idx in range(m_total):
        m = masses[idx]
        s = labels[idx]
        node = 0
        dep = 0
        while True:
            set_mass[node, s] += m
            for d in range(dim):
                set_wpos[node, s, d] += m * points[idx, d]
            npts[node] += 1
            st = state[node]
            if st == STATE_UNUSED:
                state[node] = STATE_LEAF
                for d in range(dim):
                    leaf_pos[node, d] = points[idx, d]
                leaf_mass[node] = m
                leaf_set[node] = s
                leaf_pt[node] = idx
                break
            if st == STATE_BUCKET:
                break
            if st == STATE_LEAF:
                if dep >= depth_cap:
                    state[node] = STATE_BUCKET
                    break
                # push the resident point one level down, then keep descending
                ci = 0
                for d in range(dim):
                    if leaf_pos[node, d] > center[node, d]:
                        ci |= 1 << d
                if n_nodes >= cap:
                    return (children, center, half, state, depth, npts, set_mass,
                            set_wpos, leaf_pos, leaf_mass, leaf_set, leaf_pt, -1)
                child = n_nodes
                n_nodes += 1
                h = half[node] * 0.5
                for d in range(dim):
                    off = h if (ci >> d) & 1 else -h
                    center[child, d] = center[node, d] + off
                half[child] = h
                depth[child] = dep + 1
                children[node, ci] = child
                state[child] = STATE_LEAF
                qs = leaf_set[node]
                set_mass[child, qs] = leaf_mass[node]
                for d in range(dim):
                    leaf_pos[child, d] = leaf_pos[node, d]
                    set_wpos[child, qs, d] = leaf_mass[node] * leaf_pos[node, d]
                npts[child] = 1
                leaf_mass[child] = leaf_mass[node]
                leaf_set[child] = qs
                leaf_pt[child] = leaf_pt[node]
                state[node] = STATE_INTERNAL
                leaf_set[node] = -1
                leaf_pt[node] = -1
            # internal: descend toward the new point
            ci = 0
            for d in range(dim):
                if points[idx, d] > center[node, d]:
                    ci |= 1 << d
            nxt = children[node, ci]
            if nxt < 0:
                if n_nodes >= cap:
                    return (children, center, half, state, depth, npts, set_mass,
                            set_wpos, leaf_pos, leaf_mass, leaf_set, leaf_pt, -1)
                nxt = n_nodes
                n_nodes += 1
                h = half[node] * 0.5
                for d in range(dim):
                    off = h if (ci >> d) & 1 else -h
                    center[nxt, d] = center[node, d] + off
                half[nxt] = h
                depth[nxt] = dep + 1
                children[node, ci] = nxt
            node = nxt
            dep += 1

    return (children, center, half, state, depth, npts, set_mass, set_wpos,
            leaf_pos, leaf_mass, leaf_set, leaf_pt, n_nodes)


@njit(cache=True)
def fetch_clusters_impl(children, center, half, state, set_mass, set_wpos,
                        q, exclude, theta, out_pos, out_mass):
    """Collect shadow-corrected clusters for one query. Returns the count.

    A node is emitted when it is a leaf/bucket or when side * theta < mu with
    mu the distance from q to the node's centre of mass excluding ``exclude``.
    Children are pushed in reverse order so emission follows ascending child
    index depth-first (deterministic).
    """
    dim = center.shape[1]
    n_sets = set_mass.shape[1]
    nchild = children.shape[1]
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        mrem = 0.0
        for s in range(n_sets):
            mrem += set_mass[node, s]
        if exclude >= 0:
            mrem -= set_mass[node, exclude]
        if mrem <= 0.0:
            continue
        dist2 = 0.0
        for d in range(dim):
            w = 0.0
            for s in range(n_sets):
                w += set_wpos[node, s, d]
            if exclude >= 0:
                w -= set_wpos[node, exclude, d]
            c = w / mrem
            out_pos[count, d] = c
            dd = q[d] - c
            dist2 += dd * dd
        side = 2.0 * half[node]
        if state[node] != STATE_INTERNAL or (side * theta) * (side * theta) < dist2:
            out_mass[count] = mrem
            count += 1
        else:
            for ci in range(nchild - 1, -1, -1):
                ch = children[node, ci]
                if ch >= 0:
                    stack[sp] = ch
                    sp += 1
    return count


@njit(cache=True)
def fetch_leaves_impl(children, center, half, state, set_mass, set_wpos,
                      leaf_pos, q, theta, out_pos, out_idx, leaf_pt):
    """Individually resolved points near one query: the leaf/bucket nodes that
    a theta-traversal refuses to aggregate. The distance criterion applies to
    leaves and buckets too (a far single point is its own aggregate), so the
    returned set is local with a density-adaptive radius. Buckets contribute
    their centre of mass with index -1. Returns the count."""
    dim = center.shape[1]
    n_sets = set_mass.shape[1]
    nchild = children.shape[1]
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        st = state[node]
        if st == STATE_UNUSED:
            continue
        if st == STATE_LEAF:
            dist2 = 0.0
            for d in range(dim):
                out_pos[count, d] = leaf_pos[node, d]
                dd = q[d] - leaf_pos[node, d]
                dist2 += dd * dd
            side = 2.0 * half[node]
            if (side * theta) * (side * theta) < dist2:
                continue  # far single point: its own aggregate
            out_idx[count] = leaf_pt[node]
            count += 1
            continue
        mrem = 0.0
        for s in range(n_sets):
            mrem += set_mass[node, s]
        if mrem <= 0.0:
            continue
        dist2 = 0.0
        for d in range(dim):
            w = 0.0
            for s in range(n_sets):
                w += set_wpos[node, s, d]
            c = w / mrem
            if st == STATE_BUCKET:
                out_pos[count, d] = c
            dd = q[d] - c
            dist2 += dd * dd
        side = 2.0 * half[node]
        if st == STATE_BUCKET:
            if (side * theta) * (side * theta) < dist2:
                continue
            out_idx[count] = -1
            count += 1
            continue
        if (side * theta) * (side * theta) < dist2:
            continue  # accepted as an aggregate: not an individual point
        for ci in range(nchild - 1, -1, -1):
            ch = children[node, ci]
            if ch >= 0:
                stack[sp] = ch
                sp += 1
    return count


@njit(cache=True)
def dfs_order(children, n_nodes):
    """Depth-first node order (ascending child index). Improves traversal locality."""
    order = np.empty(n_nodes, np.int64)
    stack = np.empty(n_nodes + 1, np.int64)
    stack[0] = 0
    sp = 1
    count = 0
    nchild = children.shape[1]
    while sp > 0:
        sp -= 1
        node = stack[sp]
        order[count] = node
        count += 1
        for ci in range(nchild - 1, -1, -1):
            ch = children[node, ci]
            if ch >= 0:
                stack[sp] = ch
                sp += 1
    return order


@njit(cache=True)
def shadow_aggregates(state, set_mass, set_wpos, n_nodes, exclude):
    """Per-node remaining mass and centre of mass with ``exclude`` subtracted."""
    dim = set_wpos.shape[2]
    n_sets = set_mass.shape[1]
    rem_mass = np.zeros(n_nodes)
    rem_com = np.zeros((n_nodes, dim))
    for node in range(n_nodes):
        if state[node] == STATE_UNUSED:
            continue
        m = 0.0
        for s in range(n_sets):
            m += set_mass[node, s]
        if exclude >= 0:
            m -= set_mass[node, exclude]
        rem_mass[node] = m
        if m > 0.0:
            for d in range(dim):
                w = 0.0
                for s in range(n_sets):
                    w += set_wpos[node, s, d]
                if exclude >= 0:
                    w -= set_wpos[node, exclude, d]
                rem_com[node, d] = w / m
    return rem_mass, rem_com


def _make_accumulator(dim):
    """Compile the fused traversal + normal-equation kernel for one dimension.

    ``dim`` is captured as a compile-time constant, so the per-dimension
    branches below are resolved during compilation and the residual math runs
    on scalars.

    Queries are processed in groups of `_GROUP` consecutive rows. One
    traversal per group accepts a node when side * theta is below the distance
    from the GROUP's bounding box to the node's centre of mass, which implies
    the per-point criterion for every member (a conservative, strictly more
    accurate clustering). Callers should present queries in a spatially
    coherent order (Morton) or group cluster lists degrade toward the union.
    Accepted clusters are staged contiguously so the per-point residual math
    streams sequential memory.
    """
    nchild = 1 << dim
    prot = 3 if dim == 3 else 1
    p = prot + dim
    nmom = 6 if dim == 3 else 3  # unique entries of the symmetric moment

    @njit(parallel=True, fastmath=True)
    def accumulate(children, half, state, rem_mass, rem_com,
                   qpts, moved, rotjac, wq, theta, eps, want_grad):
        # Traversal runs from the original world positions ``qpts`` (cluster
        # sets stay fixed while the delta transform moves the points);
        # residuals are evaluated at ``moved``. Per (point, cluster) only the
        # direction moments M = sum(w u d d^T) and v = sum(w psi d / |d|) are
        # accumulated; the normal equations are assembled once per point from
        # the per-point rotation derivative. Returns per-group partial sums of
        # (cost, raw weighted-distance energy, J^T J, J^T r); the caller
        # reduces them in fixed group order, so results are independent of
        # the thread count.
        n = qpts.shape[0]
        ng = (n + _GROUP - 1) // _GROUP
        out_cost = np.zeros(ng)
        out_raw = np.zeros(ng)
        out_jtj = np.zeros((ng, p, p))
        out_jtr = np.zeros((ng, p))

        for g in prange(ng):
            stack = np.empty(_STACK, np.int64)
            buf = np.empty((_BUF, dim + 1))
            blo = np.empty(dim)
            bhi = np.empty(dim)
            cost_g = np.zeros(_GROUP)
            raw_g = np.zeros(_GROUP)
            mom_g = np.zeros((_GROUP, nmom))
            vvec_g = np.zeros((_GROUP, dim))
            mom = np.empty((dim, dim))
            brows = np.empty((p, dim))
            bm = np.empty((p, dim))
            lo = g * _GROUP
            hi = min(n, lo + _GROUP)
            m = hi - lo
            for d in range(dim):
                mn = qpts[lo, d]
                mx = qpts[lo, d]
                for i in range(lo + 1, hi):
                    v = qpts[i, d]
                    if v < mn:
                        mn = v
                    if v > mx:
                        mx = v
                blo[d] = mn
                bhi[d] = mx
            stack[0] = 0
            sp = 1
            nbuf = 0
            while sp > 0 or nbuf > 0:
                while sp > 0 and nbuf < _BUF:
                    sp -= 1
                    node = stack[sp]
                    if rem_mass[node] <= 0.0:
                        continue
                    dist2 = 0.0
                    for d in range(dim):
                        c = rem_com[node, d]
                        dd = 0.0
                        if c < blo[d]:
                            dd = blo[d] - c
                        elif c > bhi[d]:
                            dd = c - bhi[d]
                        dist2 += dd * dd
                    side = 2.0 * half[node]
                    if state[node] != STATE_INTERNAL or (side * theta) * (side * theta) < dist2:
                        for d in range(dim):
                            buf[nbuf, d] = rem_com[node, d]
                        buf[nbuf, dim] = rem_mass[node]
                        nbuf += 1
                    else:
                        for ci in range(nchild - 1, -1, -1):
                            ch = children[node, ci]
                            if ch >= 0:
                                stack[sp] = ch
                                sp += 1
                # flush the staged clusters against every point in the group
                for ii in range(m):
                    i = lo + ii
                    wi = wq[i]
                    if dim == 3:
                        mx0 = moved[i, 0]
                        mx1 = moved[i, 1]
                        mx2 = moved[i, 2]
                        if want_grad:
                            c_ = 0.0
                            r_ = 0.0
                            v0 = 0.0
                            v1 = 0.0
                            v2 = 0.0
                            m00 = 0.0
                            m01 = 0.0
                            m02 = 0.0
                            m11 = 0.0
                            m12 = 0.0
                            m22 = 0.0
                            for jj in range(nbuf):
                                d0 = mx0 - buf[jj, 0]
                                d1 = mx1 - buf[jj, 1]
                                d2 = mx2 - buf[jj, 2]
                                r2 = d0 * d0 + d1 * d1 + d2 * d2
                                dist = np.sqrt(r2)
                                w = wi * buf[jj, 3]
                                r_ += w * dist
                                psi = min(dist, eps)
                                c_ += w * (0.5 * psi * psi + eps * (dist - psi))
                                inv = 1.0 / max(dist, 1e-300)
                                wpsi = w * psi * inv
                                wu = wpsi * inv * inv
                                v0 += wpsi * d0
                                v1 += wpsi * d1
                                v2 += wpsi * d2
                                m00 += wu * d0 * d0
                                m01 += wu * d0 * d1
                                m02 += wu * d0 * d2
                                m11 += wu * d1 * d1
                                m12 += wu * d1 * d2
                                m22 += wu * d2 * d2
                            vvec_g[ii, 0] += v0
                            vvec_g[ii, 1] += v1
                            vvec_g[ii, 2] += v2
                            mom_g[ii, 0] += m00
                            mom_g[ii, 1] += m01
                            mom_g[ii, 2] += m02
                            mom_g[ii, 3] += m11
                            mom_g[ii, 4] += m12
                            mom_g[ii, 5] += m22
                        else:
                            c_ = 0.0
                            r_ = 0.0
                            for jj in range(nbuf):
                                d0 = mx0 - buf[jj, 0]
                                d1 = mx1 - buf[jj, 1]
                                d2 = mx2 - buf[jj, 2]
                                dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                                w = wi * buf[jj, 3]
                                r_ += w * dist
                                psi = min(dist, eps)
                                c_ += w * (0.5 * psi * psi + eps * (dist - psi))
                    else:
                        mx0 = moved[i, 0]
                        mx1 = moved[i, 1]
                        if want_grad:
                            c_ = 0.0
                            r_ = 0.0
                            v0 = 0.0
                            v1 = 0.0
                            m00 = 0.0
                            m01 = 0.0
                            m11 = 0.0
                            for jj in range(nbuf):
                                d0 = mx0 - buf[jj, 0]
                                d1 = mx1 - buf[jj, 1]
                                r2 = d0 * d0 + d1 * d1
                                dist = np.sqrt(r2)
                                w = wi * buf[jj, 2]
                                r_ += w * dist
                                psi = min(dist, eps)
                                c_ += w * (0.5 * psi * psi + eps * (dist - psi))
                                inv = 1.0 / max(dist, 1e-300)
                                wpsi = w * psi * inv
                                wu = wpsi * inv * inv
                                v0 += wpsi * d0
                                v1 += wpsi * d1
                                m00 += wu * d0 * d0
                                m01 += wu * d0 * d1
                                m11 += wu * d1 * d1
                            vvec_g[ii, 0] += v0
                            vvec_g[ii, 1] += v1
                            mom_g[ii, 0] += m00
                            mom_g[ii, 1] += m01
                            mom_g[ii, 2] += m11
                        else:
                            c_ = 0.0
                            r_ = 0.0
                            for jj in range(nbuf):
                                d0 = mx0 - buf[jj, 0]
                                d1 = mx1 - buf[jj, 1]
                                dist = np.sqrt(d0 * d0 + d1 * d1)
                                w = wi * buf[jj, 2]
                                r_ += w * dist
                                psi = min(dist, eps)
                                c_ += w * (0.5 * psi * psi + eps * (dist - psi))
                    cost_g[ii] += c_
                    raw_g[ii] += r_
                nbuf = 0
            for ii in range(m):
                out_cost[g] += cost_g[ii]
                out_raw[g] += raw_g[ii]
            if want_grad:
                for ii in range(m):
                    i = lo + ii
                    if dim == 3:
                        mom[0, 0] = mom_g[ii, 0]
                        mom[0, 1] = mom_g[ii, 1]
                        mom[0, 2] = mom_g[ii, 2]
                        mom[1, 0] = mom_g[ii, 1]
                        mom[1, 1] = mom_g[ii, 3]
                        mom[1, 2] = mom_g[ii, 4]
                        mom[2, 0] = mom_g[ii, 2]
                        mom[2, 1] = mom_g[ii, 4]
                        mom[2, 2] = mom_g[ii, 5]
                    else:
                        mom[0, 0] = mom_g[ii, 0]
                        mom[0, 1] = mom_g[ii, 1]
                        mom[1, 0] = mom_g[ii, 1]
                        mom[1, 1] = mom_g[ii, 2]
                    # rows of B = [dRp/dparams ; I]: fold moments into the
                    # normal equations once per point
                    for k in range(prot):
                        for d in range(dim):
                            brows[k, d] = rotjac[i, k, d]
                    for d1 in range(dim):
                        for d2 in range(dim):
                            brows[prot + d1, d2] = 1.0 if d1 == d2 else 0.0
                    for a in range(p):
                        acc = 0.0
                        for d in range(dim):
                            acc += brows[a, d] * vvec_g[ii, d]
                            s = 0.0
                            for e in range(dim):
                                s += brows[a, e] * mom[e, d]
                            bm[a, d] = s
                        out_jtr[g, a] += acc
                    for a in range(p):
                        for b in range(a + 1):
                            s = 0.0
                            for d in range(dim):
                                s += bm[a, d] * brows[b, d]
                            out_jtj[g, a, b] += s
        return out_cost, out_raw, out_jtj, out_jtr

    return accumulate


@lru_cache(maxsize=None)
def get_accumulator(dim):
    """Cached per-dimension instance of the fused residual kernel."""
    return _make_accumulator(dim)


@njit(cache=True)
def count_clusters(children, center, half, state, set_mass, set_wpos, q, exclude, theta):
    """Number of clusters a fetch would return (no outputs materialized)."""
    dim = center.shape[1]
    n_sets = set_mass.shape[1]
    nchild = children.shape[1]
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        mrem = 0.0
        for s in range(n_sets):
            mrem += set_mass[node, s]
        if exclude >= 0:
            mrem -= set_mass[node, exclude]
        if mrem <= 0.0:
            continue
        dist2 = 0.0
        for d in range(dim):
            w = 0.0
            for s in range(n_sets):
                w += set_wpos[node, s, d]
            if exclude >= 0:
                w -= set_wpos[node, exclude, d]
            cd = w / mrem
            dd = q[d] - cd
            dist2 += dd * dd
        side = 2.0 * half[node]
        if state[node] != STATE_INTERNAL or (side * theta) * (side * theta) < dist2:
            count += 1
        else:
            for ci in range(nchild - 1, -1, -1):
                ch = children[node, ci]
                if ch >= 0:
                    stack[sp] = ch
                    sp += 1
    return count
