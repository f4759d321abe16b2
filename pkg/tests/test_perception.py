"""Ground removal, clustering, wall selection, and polynomial fitting."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from racenav import perception
from racenav.perception import (
    Cluster,
    PerceptionError,
    PerceptionParams,
    PointCloud,
    cluster,
    fit_wall,
    filter_ground,
    grid_vote,
    load_cloud,
    save_cloud,
    select_wall,
    voxel_downsample,
)


def cloud(pts):
    return PointCloud(np.asarray(pts, dtype=float))


class TestVoxelDownsample:
    def test_singleton(self):
        c = voxel_downsample(cloud([[1.0, 2.0, 3.0]]), 0.5)
        np.testing.assert_allclose(c.points, [[1.0, 2.0, 3.0]])

    def test_single_cell_collapse(self):
        rng = np.random.default_rng(0)
        pts = 0.1 + 0.3 * rng.random((8, 3))  # all inside one 0.5 m voxel
        c = voxel_downsample(cloud(pts), 0.5)
        assert len(c) == 1
        np.testing.assert_allclose(c.points[0], pts.mean(axis=0))

    def test_distinct_cells_retained(self):
        c = voxel_downsample(cloud([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]), 0.5)
        assert len(c) == 2

    def test_bad_leaf(self):
        with pytest.raises(ValueError):
            voxel_downsample(cloud([[0, 0, 0]]), 0.0)


class TestGridVote:
    def test_empty_cloud(self):
        g = grid_vote(PointCloud(np.empty((0, 3))), 0.4)
        assert g.cells == {}

    def test_vertical_stack_single_cell(self):
        pts = [[1.0, 1.0, 0.05 * i] for i in range(20)]
        g = grid_vote(cloud(pts), 0.4)
        assert len(g.cells) == 1
        (vote,) = g.cells.values()
        assert vote.count == 20

    def test_flat_grid_one_vote_per_cell(self):
        pts = [[i + 0.5, j + 0.5, 0.0] for i in range(10) for j in range(10)]
        g = grid_vote(cloud(pts), 1.0)
        assert len(g.cells) == 100
        assert all(v.count == 1 for v in g.cells.values())

    @settings(deadline=None)
    @given(st.integers(min_value=0, max_value=200), st.integers(0, 2**32 - 1))
    def test_count_conservation(self, n, seed):
        pts = np.random.default_rng(seed).uniform(-20, 20, size=(n, 3))
        g = grid_vote(PointCloud(pts), 0.4)
        assert sum(v.count for v in g.cells.values()) == n


class TestFilterGround:
    def test_all_flat_vertical_empty(self):
        pts = [[i * 2.0, 0.0, 0.0] for i in range(10)]
        c = cloud(pts)
        ground, vertical = filter_ground(c, grid_vote(c, 0.4), 5)
        assert len(vertical) == 0
        assert len(ground) == 10

    def test_single_column_all_vertical(self):
        pts = [[3.0, 3.0, 0.05 * i] for i in range(20)]
        c = cloud(pts)
        ground, vertical = filter_ground(c, grid_vote(c, 0.4), 5)
        assert len(vertical) == 20
        assert len(ground) == 0

    def test_partition_is_exact(self):
        rng = np.random.default_rng(2)
        c = PointCloud(rng.uniform(-5, 5, size=(300, 3)))
        g = grid_vote(c, 0.4)
        ground, vertical = filter_ground(c, g, 3)
        assert len(ground) + len(vertical) == len(c)

    def test_grid_cloud_mismatch(self):
        c1 = cloud([[0, 0, 0]])
        c2 = cloud([[0, 0, 0], [1, 1, 1]])
        with pytest.raises(PerceptionError):
            filter_ground(c2, grid_vote(c1, 0.4), 5)


def brute_force_partition(pts, tol):
    """O(n^2) single-linkage reference: connected components of the
    pairwise threshold graph."""
    if len(pts) == 0:
        return np.empty(0, dtype=int)
    adj = squareform(pdist(pts)) <= tol
    _, labels = connected_components(adj, directed=False)
    return labels


def canonical(groups):
    return sorted(sorted(g) for g in groups)


class TestCluster:
    def test_close_pair_single_cluster(self):
        cs = cluster(cloud([[0, 0, 0], [0.1, 0, 0]]), 0.5, min_size=1)
        assert len(cs) == 1
        assert cs[0].point_indices.tolist() == [0, 1]

    def test_far_groups_split(self):
        cs = cluster(cloud([[0, 0, 0], [0.1, 0, 0], [10, 0, 0], [10.1, 0, 0]]), 0.5, 1)
        assert len(cs) == 2

    def test_min_size_drops_small(self):
        cs = cluster(cloud([[0, 0, 0], [10, 0, 0], [10.1, 0, 0]]), 0.5, min_size=2)
        assert len(cs) == 1

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            pts = rng.uniform(-10, 10, size=(200, 3))
            cs = cluster(PointCloud(pts), 1.5, min_size=1)
            got = canonical(c.point_indices.tolist() for c in cs)
            labels = brute_force_partition(pts, 1.5)
            want = canonical(
                np.flatnonzero(labels == k).tolist() for k in np.unique(labels)
            )
            assert got == want

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-5, 5, size=(60, 3))
        perm = rng.permutation(60)
        a = canonical(
            c.point_indices.tolist() for c in cluster(PointCloud(pts), 1.0, 1)
        )
        # permuted input: map indices back before comparing partitions
        b = canonical(
            sorted(int(perm[i]) for i in c.point_indices)
            for c in cluster(PointCloud(pts[perm]), 1.0, 1)
        )
        assert a == b

    def test_centroid_is_mean(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        cs = cluster(PointCloud(pts), 2.0, 1)
        np.testing.assert_allclose(cs[0].centroid, [0.5, 0.5, 0.5])


def wall_like(n, x0, x1, y):
    xs = np.linspace(x0, x1, n)
    return np.column_stack([xs, np.full(n, y), np.zeros(n)])


class TestSelectWall:
    def make(self, pts):
        pts = np.asarray(pts, dtype=float)
        return Cluster(
            point_indices=np.arange(len(pts)),
            centroid=pts.mean(axis=0),
            length=float(pdist(pts[:, :2]).max()) if len(pts) > 1 else 0.0,
        )

    def test_long_wall_beats_pylon(self):
        wall = self.make(wall_like(30, 0, 30, -4.0))
        pylon = self.make(wall_like(3, 10, 11, -2.0))
        assert select_wall([pylon, wall], "right") is wall

    def test_empty_side_raises(self):
        left_only = self.make(wall_like(10, 0, 10, 3.0))
        with pytest.raises(PerceptionError):
            select_wall([left_only], "right")

    def test_tie_goes_to_lower_index(self):
        a = self.make(wall_like(10, 0, 10, -3.0))
        b = self.make(wall_like(10, 0, 10, -5.0))
        assert select_wall([a, b], "right") is a

    def test_side_left(self):
        left = self.make(wall_like(10, 0, 10, 3.0))
        right = self.make(wall_like(20, 0, 20, -3.0))
        assert select_wall([left, right], "left") is left


class TestFitWall:
    def fit(self, pts, order=2):
        c = cloud(pts)
        w = Cluster(
            point_indices=np.arange(len(c)),
            centroid=c.points.mean(axis=0),
            length=0.0,
        )
        return fit_wall(w, c, order=order)

    def test_exact_quadratic(self):
        xs = np.linspace(-5, 5, 30)
        pts = np.column_stack([xs, 2 + 0.5 * xs + 0.1 * xs**2, np.zeros(30)])
        m = self.fit(pts)
        np.testing.assert_allclose(m.coeffs, [2.0, 0.5, 0.1], atol=1e-9)
        assert m.d_w == pytest.approx(2.0)

    def test_horizontal_wall(self):
        m = self.fit(wall_like(20, 0, 20, 3.0))
        np.testing.assert_allclose(m.coeffs, [3.0, 0.0, 0.0], atol=1e-9)
        assert m.d_w == pytest.approx(3.0)

    def test_noisy_quadratic_within_3_sigma(self):
        # Monte Carlo: the mean estimate over repeated noisy fits should
        # land within 3 standard errors of the true coefficients.
        rng = np.random.default_rng(11)
        true = np.array([1.0, 0.2, 0.05])
        fits = []
        for _ in range(100):
            xs = rng.uniform(-10, 10, 100)
            ys = true[0] + true[1] * xs + true[2] * xs**2
            ys = ys + rng.normal(0, 0.05, 100)
            pts = np.column_stack([xs, ys, np.zeros(100)])
            fits.append(self.fit(pts).coeffs)
        est = np.mean(fits, axis=0)
        se = np.std(fits, axis=0) / 10.0
        assert np.all(np.abs(est - true) < 3 * se + 1e-6)

    def test_exact_recovery_random_polynomials(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            coeffs = rng.uniform(-2, 2, 3)
            xs = rng.uniform(-20, 20, 12)
            ys = coeffs[0] + coeffs[1] * xs + coeffs[2] * xs**2
            pts = np.column_stack([xs, ys, np.zeros(len(xs))])
            m = self.fit(pts)
            np.testing.assert_allclose(m.coeffs, coeffs, atol=1e-9)

    def test_underdetermined_raises(self):
        with pytest.raises(PerceptionError):
            self.fit([[0.0, 1.0, 0.0], [1.0, 2.0, 0.0]], order=2)


class TestCloudIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(9)
        c = PointCloud(rng.uniform(-50, 50, size=(40, 3)))
        path = tmp_path / "cloud.txt"
        save_cloud(c, path)
        back = load_cloud(path)
        np.testing.assert_array_equal(back.points, c.points)

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# header\n\n1.0 2.0 3.0\n# trailing\n")
        c = load_cloud(path)
        np.testing.assert_allclose(c.points, [[1.0, 2.0, 3.0]])

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("1.0 2.0 3.0\n1.0 nope\n")
        with pytest.raises(PerceptionError, match=":2:"):
            load_cloud(path)


class TestPipeline:
    def test_determinism(self):
        from racenav.sim import make_banked_scene

        scene, _ = make_banked_scene()
        params = PerceptionParams()
        a = perception.detect_wall(scene, params)
        b = perception.detect_wall(scene, params)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)
        assert a.d_w == b.d_w

    def test_empty_cloud_returns_none(self):
        assert perception.detect_wall(
            PointCloud(np.empty((0, 3))), PerceptionParams()
        ) is None
