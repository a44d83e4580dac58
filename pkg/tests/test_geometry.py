import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pccomplete.errors import ContractViolation
from pccomplete.geometry import (ball_query, ball_query_indices, farthest_point_sample, grid_codes,
                                 mirror_xy, nearest_neighbor, nearest_neighbor_brute,
                                 nearest_neighbor_kdtree)


def greedy_fps_oracle(points, k, start=0):
    """Plain-loop greedy max-min: recompute every candidate's distance to
    all picked points each round; strict '>' keeps the lowest index on ties."""
    n = len(points)
    picked = [start]
    for _ in range(k - 1):
        best, best_i = -1.0, -1
        for i in range(n):
            if i in picked:
                continue
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in picked)
            if d > best:
                best, best_i = d, i
        picked.append(best_i)
    return picked


def nn_oracle(a, b):
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(a)), idx]


class TestFarthestPointSample:
    def test_collinear_hand_run(self):
        pts = np.array([[x, 0.0, 0.0] for x in range(5)])
        assert farthest_point_sample(pts, 3, 0).tolist() == [0, 4, 2]

    def test_k_equals_n_is_a_permutation(self, rng):
        pts = rng.standard_normal((30, 3))
        assert sorted(farthest_point_sample(pts, 30).tolist()) == list(range(30))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_greedy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        pts = rng.standard_normal((n, 3))
        k = int(rng.integers(1, n + 1))
        start = int(rng.integers(n))
        assert farthest_point_sample(pts, k, start).tolist() == greedy_fps_oracle(pts, k, start)

    def test_duplicates_never_repicked(self):
        pts = np.zeros((6, 3))
        pts[3] = [1, 0, 0]
        out = farthest_point_sample(pts, 6)
        assert sorted(out.tolist()) == list(range(6))
        assert out.tolist() == greedy_fps_oracle(pts, 6)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 60))
    def test_prefix_property(self, seed, n):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((n, 3))
        k = int(rng.integers(2, n + 1))
        kp = int(rng.integers(1, k))
        assert farthest_point_sample(pts, k)[:kp].tolist() == farthest_point_sample(pts, kp).tolist()

    def test_spreads_more_than_random_subsets(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (300, 3))

        def min_gap(sel):
            q = pts[sel]
            d = np.sqrt(((q[:, None] - q[None]) ** 2).sum(-1))
            return d[np.triu_indices(len(sel), 1)].min()

        fps_gap = min_gap(farthest_point_sample(pts, 16))
        random_gaps = [min_gap(rng.choice(300, 16, replace=False)) for _ in range(200)]
        assert fps_gap >= np.mean(random_gaps)

    def test_k_out_of_range(self):
        with pytest.raises(ContractViolation):
            farthest_point_sample(np.zeros((3, 3)), 4)
        with pytest.raises(ContractViolation):
            farthest_point_sample(np.zeros((3, 3)), 0)


class TestNearestNeighbor:
    def test_hand_example(self):
        nn = nearest_neighbor(np.zeros((1, 3)), np.array([[1.0, 0, 0], [0, 2.0, 0]]))
        assert nn.index.tolist() == [0]
        assert nn.distance.tolist() == [1.0]

    def test_self_query_duplicates_map_to_lowest(self):
        pts = np.array([[0.0, 0, 0], [1, 1, 1], [0, 0, 0], [2, 0, 0]])
        for method in ("brute", "kdtree"):
            nn = nearest_neighbor(pts, pts, method=method)
            assert nn.index.tolist() == [0, 1, 0, 3]
            assert nn.sq_distance.tolist() == [0, 0, 0, 0]

    def test_random_200_vs_300(self, rng):
        a, b = rng.standard_normal((200, 3)), rng.standard_normal((300, 3))
        idx, d2 = nn_oracle(a, b)
        for method in ("brute", "kdtree", "auto"):
            nn = nearest_neighbor(a, b, method=method)
            assert nn.index.tolist() == idx.tolist()
            np.testing.assert_allclose(nn.sq_distance, d2, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_tie_heavy_lattice(self, dtype):
        rng = np.random.default_rng(5)
        a = (rng.integers(-4, 5, (150, 3)) * 0.25).astype(dtype)
        b = (rng.integers(-4, 5, (220, 3)) * 0.25).astype(dtype)
        idx, d2 = nn_oracle(a, b)
        nn = nearest_neighbor_kdtree(a, b)
        assert nn.index.tolist() == idx.tolist()
        assert nn.sq_distance.tolist() == d2.tolist()

    def test_float32_agrees_with_brute(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((400, 3)).astype(np.float32)
        b = rng.standard_normal((500, 3)).astype(np.float32)
        brute = nearest_neighbor_brute(a, b)
        kd = nearest_neighbor_kdtree(a, b)
        assert kd.index.tolist() == brute.index.tolist()
        assert kd.sq_distance.tobytes() == brute.sq_distance.tobytes()

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            nearest_neighbor(np.zeros((0, 3)), np.zeros((2, 3)))
        with pytest.raises(ContractViolation):
            nearest_neighbor_kdtree(np.zeros((2, 3)), np.zeros((0, 3)))


class TestBallQuery:
    def test_large_radius_takes_first_members(self, rng):
        pts = rng.uniform(-0.1, 0.1, (20, 3))
        groups = ball_query(pts, [0, 5], radius=10.0, max_samples=8)
        for g in groups:
            assert g.members.tolist() == list(range(8))
            assert g.count == 8
        assert ball_query(pts, [3], 10.0, 50)[0].count == 20

    def test_tiny_radius_only_seed(self, rng):
        pts = rng.standard_normal((30, 3))
        groups = ball_query(pts, [4, 7], radius=1e-6, max_samples=5)
        assert groups[0].members.tolist() == [4] * 5
        assert groups[1].members.tolist() == [7] * 5
        assert groups[0].count == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_distance_filter(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-0.5, 0.5, (200, 3))
        seeds = rng.choice(200, 16, replace=False)
        idx, counts = ball_query_indices(pts, seeds, 0.2, 12)
        for row, s in enumerate(seeds):
            within = [j for j in range(200) if np.sum((pts[j] - pts[s]) ** 2) <= 0.04]
            expect = within[:12] + [int(s)] * (12 - min(12, len(within)))
            assert idx[row].tolist() == expect
            assert counts[row] == min(12, len(within))
            members = pts[idx[row]]
            assert (np.linalg.norm(members - pts[s], axis=1) <= 0.2 + 1e-12).all()

    def test_bad_arguments(self):
        with pytest.raises(ContractViolation):
            ball_query(np.zeros((3, 3)), [0], 0.0, 4)
        with pytest.raises(ContractViolation):
            ball_query(np.zeros((3, 3)), [0], 0.1, 0)


class TestMirror:
    def test_definition(self):
        assert mirror_xy(np.array([[1.0, 2.0, 3.0]])).tolist() == [[1.0, 2.0, -3.0]]

    def test_involution_bit_exact(self, rng):
        pts = rng.standard_normal((50, 3))
        assert mirror_xy(mirror_xy(pts)).tobytes() == pts.tobytes()

    def test_plane_points_fixed(self):
        pts = np.array([[0.3, -0.2, 0.0]])
        np.testing.assert_array_equal(mirror_xy(pts), pts)

    def test_isometry(self, rng):
        pts = rng.standard_normal((40, 3))
        m = mirror_xy(pts)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        dm = np.linalg.norm(m[:, None] - m[None], axis=-1)
        np.testing.assert_allclose(d, dm, atol=1e-12, rtol=0)

    def test_does_not_modify_input(self):
        pts = np.array([[1.0, 1.0, 1.0]])
        mirror_xy(pts)
        assert pts[0, 2] == 1.0


class TestGridCodes:
    def test_two_copies(self):
        codes = grid_codes(1, 2, 0.05)
        assert codes.tolist() == [[-0.05, -0.05], [0.05, 0.05]]

    def test_rows_of_one_copy_share_code(self):
        codes = grid_codes(5, 3, 0.05)
        assert codes.shape == (15, 2)
        for c in range(3):
            assert len({tuple(r) for r in codes[c::3]}) == 1

    def test_codes_distinct_across_copies(self):
        codes = grid_codes(2, 4, 0.1)
        assert len({tuple(r) for r in codes[:4]}) == 4
        assert np.abs(codes).max() == pytest.approx(0.1)

    def test_needs_two_copies(self):
        with pytest.raises(ContractViolation):
            grid_codes(3, 1)
