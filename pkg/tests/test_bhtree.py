"""Spatial tree: construction, shadowed fetches, and structural invariants."""
import numpy as np
import pytest

from mbga import PointCloud, build
from mbga.bhtree import morton_order
from mbga import _kernels as K
from mbga.errors import DimensionMismatch, EmptyInput

from conftest import random_cloud


def brute_aggregate(clouds, exclude):
    """Total mass and mass-weighted centroid of all non-excluded points."""
    m = 0.0
    wp = 0.0
    for l, c in enumerate(clouds):
        if l == exclude:
            continue
        m += c.masses.sum()
        wp += c.masses @ c.points
    return m, wp


class TestBuild:
    def test_requires_clouds(self):
        with pytest.raises(EmptyInput):
            build([])

    def test_rejects_mixed_dims(self, rng):
        with pytest.raises(DimensionMismatch):
            build([random_cloud(rng, 5, dim=2), random_cloud(rng, 5, dim=3)])

    def test_bad_depth_cap(self, rng):
        with pytest.raises(ValueError):
            build([random_cloud(rng, 5)], depth_cap=0)

    def test_single_point_cloud(self):
        t = build([PointCloud.from_points([[1.0, 2.0, 3.0]])])
        assert t.total_mass() == 1.0
        assert t.max_depth() == 0

    def test_node_masses_sum_over_children(self, rng):
        clouds = [random_cloud(rng, 120, label=l) for l in range(3)]
        t = build(clouds)
        for n in range(t.n_nodes):
            if t.state[n] != K.STATE_INTERNAL:
                continue
            kids = t.children[n][t.children[n] >= 0]
            np.testing.assert_allclose(t.set_mass[n],
                                       t.set_mass[kids].sum(axis=0), rtol=1e-12)
            np.testing.assert_allclose(t.set_wpos[n],
                                       t.set_wpos[kids].sum(axis=0), atol=1e-12)

    def test_dfs_layout_children_follow_parent(self, rng):
        t = build([random_cloud(rng, 200)])
        for n in range(t.n_nodes):
            for c in t.children[n]:
                if c >= 0:
                    assert c > n

    def test_coincident_points_bucket_within_depth_cap(self):
        pts = np.tile([[0.25, 0.25, 0.25]], (50, 1))
        pts = np.vstack([pts, [[1.0, 1.0, 1.0]]])
        t = build([PointCloud.from_points(pts)], depth_cap=20)
        assert t.max_depth() <= 20
        assert np.any(t.state[:t.n_nodes] == K.STATE_BUCKET)
        assert t.total_mass() == pytest.approx(51.0)

    def test_dump_mentions_every_node(self, rng):
        t = build([random_cloud(rng, 30)])
        assert len(t.dump().strip().splitlines()) == t.n_nodes


class TestFetch:
    def test_theta_validation(self, rng):
        t = build([random_cloud(rng, 10)])
        with pytest.raises(ValueError):
            t.fetch_arrays(np.zeros(3), None, 0.0)

    def test_huge_theta_resolves_every_point(self, rng):
        clouds = [random_cloud(rng, 40, label=l) for l in range(2)]
        t = build(clouds)
        pos, mass = t.fetch_arrays(clouds[0].points[0], 0, 1e9)
        assert mass.shape[0] == clouds[1].n
        # every other-set point appears exactly once
        order = np.lexsort(pos.T)
        ref = clouds[1].points[np.lexsort(clouds[1].points.T)]
        np.testing.assert_allclose(pos[order], ref, atol=1e-12)

    def test_tiny_theta_single_root_cluster(self, rng):
        clouds = [random_cloud(rng, 40, label=l) for l in range(2)]
        t = build(clouds)
        q = clouds[0].points[0] + 100.0  # far away, root cell passes any test
        pos, mass = t.fetch_arrays(q, 0, 1e-9)
        assert mass.shape[0] == 1
        m_ref, wp_ref = brute_aggregate(clouds, 0)
        assert mass[0] == pytest.approx(m_ref)
        np.testing.assert_allclose(pos[0], wp_ref / m_ref, atol=1e-12)

    def test_fetch_clusters_matches_arrays(self, rng):
        clouds = [random_cloud(rng, 30, label=l) for l in range(2)]
        t = build(clouds)
        q = clouds[0].points[3]
        pos, mass = t.fetch_arrays(q, 0, 5.0)
        cl = t.fetch_clusters(q, 0, 5.0)
        assert len(cl) == mass.shape[0]
        np.testing.assert_allclose(cl[0].position, pos[0])

    def test_fetch_leaf_points_indices(self, rng):
        c = random_cloud(rng, 60)
        t = build([c])
        pos, idx = t.fetch_leaf_points(c.points[0], 8.0)
        assert pos.shape[0] == idx.shape[0] > 0
        for p, i in zip(pos, idx):
            if i >= 0:
                np.testing.assert_allclose(p, t.points[i], atol=1e-12)

    def test_fetch_leaf_points_huge_theta_is_everything(self, rng):
        c = random_cloud(rng, 25)
        t = build([c])
        pos, idx = t.fetch_leaf_points(c.points[0], 1e9)
        assert pos.shape[0] == 25
        assert set(idx.tolist()) == set(range(25))


class TestRandomizedInvariants:
    # mass conservation under shadowing, refinement monotonicity in theta,
    # and the depth cap, across many randomized instances
    def test_property_suite(self, rng):
        for case in range(300):
            n_sets = int(rng.integers(1, 4))
            clouds = [random_cloud(rng, int(rng.integers(5, 50)), label=l,
                                   scale=float(rng.uniform(0.1, 10.0)))
                      for l in range(n_sets)]
            t = build(clouds)
            assert t.max_depth() <= 20
            exclude = int(rng.integers(0, n_sets)) if n_sets > 1 else None
            q = rng.normal(scale=5.0, size=3)
            theta = float(rng.uniform(0.1, 30.0))
            pos, mass = t.fetch_arrays(q, exclude, theta)
            m_ref, wp_ref = brute_aggregate(clouds, -1 if exclude is None else exclude)
            assert mass.sum() == pytest.approx(m_ref, rel=1e-10)
            np.testing.assert_allclose(mass @ pos, wp_ref, rtol=1e-9, atol=1e-9)
            # larger theta opens more cells: cluster count is non-decreasing
            lo = t.count_clusters(q, exclude, theta)
            hi = t.count_clusters(q, exclude, theta * 2.0)
            assert lo <= hi


class TestMortonOrder:
    def test_is_permutation(self, rng):
        pts = rng.normal(size=(100, 3))
        perm = morton_order(pts)
        assert sorted(perm.tolist()) == list(range(100))

    def test_neighbors_stay_close(self, rng):
        # consecutive points along the curve are closer on average than random
        pts = rng.uniform(size=(2000, 3))
        perm = morton_order(pts)
        s = pts[perm]
        curve = np.linalg.norm(np.diff(s, axis=0), axis=1).mean()
        rand = np.linalg.norm(np.diff(pts, axis=0), axis=1).mean()
        assert curve < 0.5 * rand

    def test_constant_coordinate_handled(self):
        pts = np.zeros((10, 3))
        pts[:, 0] = np.arange(10)
        perm = morton_order(pts)
        assert sorted(perm.tolist()) == list(range(10))
