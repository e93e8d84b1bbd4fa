import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blurkp import evalkit as ek
from blurkp.evalkit import Homography
from blurkp.keypoint import Keypoint


def kp(x, y, s=1.0):
    return Keypoint(float(x), float(y), float(s))


class TestGeometry:
    def test_identity_and_translation(self):
        assert ek.warp_point(Homography.identity(), (3.5, -2.0)) == (3.5, -2.0)
        assert ek.warp_point(Homography.translation(5, -3), (1, 1)) == (6.0, -2.0)

    def test_perspective_division(self):
        x, y = ek.warp_point([[1, 0, 0], [0, 1, 0], [0.001, 0, 1]], (100, 50))
        assert x == pytest.approx(100 / 1.1) and y == pytest.approx(50 / 1.1)

    def test_point_at_infinity(self):
        with pytest.raises(ValueError):
            ek.warp_point([[1, 0, 0], [0, 1, 0], [0.01, 0, 1]], (-100, 0))

    def test_normalization_and_singular(self):
        h = Homography(np.eye(3) * 2)
        np.testing.assert_array_equal(h.matrix, np.eye(3))
        with pytest.raises(ValueError):
            Homography(np.zeros((3, 3)))

    def test_jacobian(self):
        assert ek.jacobian_scale(Homography.identity(), (4, 5)) == pytest.approx(1.0)
        assert ek.jacobian_scale(np.diag([2.0, 2.0, 1.0]), (4, 5)) == pytest.approx(2.0)
        assert ek.jacobian_scale(np.diag([2.0, 0.5, 1.0]), (4, 5)) == pytest.approx(1.0)

    def test_jacobian_matches_finite_difference(self):
        m = np.array([[1.1, 0.05, 3], [-0.02, 0.95, -1], [1e-4, -2e-4, 1]])
        p, h = np.array([40.0, 70.0]), 1e-5
        cols = [(ek.warp_points(m, [p + d])[0] - ek.warp_points(m, [p - d])[0]) / (2 * h)
                for d in (np.array([h, 0]), np.array([0, h]))]
        det = abs(np.linalg.det(np.stack(cols, axis=1)))
        assert ek.jacobian_scale(m, p) == pytest.approx(np.sqrt(det), rel=1e-6)

    def test_inverse_round_trip(self, rng):
        m = Homography([[1.05, 0.02, 4], [-0.03, 0.97, -2], [1e-4, 5e-5, 1]])
        pts = rng.uniform(0, 200, (20, 2))
        back = ek.warp_points(m, ek.warp_points(m.inverse(), pts))
        np.testing.assert_allclose(back, pts, atol=1e-6)


class TestOverlap:
    def test_identical_is_zero(self):
        for rho in (0.5, 4.0, 10.0):
            assert ek.region_overlap_error(kp(3, 4), kp(3, 4), Homography.identity(), rho) == 0.0

    def test_boundary_exactly_point_four(self):
        e = ek.region_overlap_error(kp(10, 10), kp(12, 10), Homography.identity(), 4.0)
        assert e == 0.4
        assert ek.match_one_to_one([[e]], 0.4) == []

    def test_disjoint(self):
        assert ek.region_overlap_error(kp(0, 0), kp(20, 0), Homography.identity()) == 1.0

    def test_scaled_square(self):
        # reference square doubles in side under a 2x zoom
        e = ek.region_overlap_error(kp(10, 10), kp(20, 20), np.diag([2.0, 2.0, 1.0]), 4.0)
        assert e == pytest.approx(1 - 64 / 256)

    def test_bad_rho(self):
        with pytest.raises(ValueError):
            ek.overlap_errors([[0, 0]], [[0, 0]], np.eye(3), 0.0)


class TestSharedRegion:
    def test_identity_keeps_interior(self):
        pts = [kp(5, 5), kp(50, 50), kp(2, 50), kp(95, 95)]
        r, t = ek.shared_region_filter(pts, pts, np.eye(3), (100, 100), (100, 100), 4.0)
        assert r == [kp(5, 5), kp(50, 50), kp(95, 95)]
        assert r == t

    def test_full_width_translation(self):
        pts = [kp(x, 50) for x in range(0, 100, 7)]
        r, t = ek.shared_region_filter(pts, pts, Homography.translation(100, 0), (100, 100), (100, 100))
        assert r == [] and t == []

    def test_half_width_translation(self):
        W = 100
        pts = [kp(x, 50) for x in range(0, W)]
        r, _ = ek.shared_region_filter(pts, pts, Homography.translation(W / 2, 0), (100, W), (100, W), 4.0)
        assert all(k.x < W / 2 - 4 for k in r)
        assert {k.x for k in r} == {float(x) for x in range(0, W) if x + W / 2 >= 4 and x + W / 2 < W - 4}


class TestMatching:
    def test_empty(self):
        assert ek.match_one_to_one(np.zeros((0, 3))) == []
        assert ek.match_one_to_one(np.ones((2, 2))) == []

    def test_hand_trace(self):
        m = ek.match_one_to_one([[0.1, 0.2], [0.2, 0.5]], 0.4)
        assert {(i, j) for i, j, _ in m} == {(0, 0)}
        m = ek.match_one_to_one([[0.1, 0.2], [0.2, 0.3]], 0.4)
        assert {(i, j) for i, j, _ in m} == {(0, 0), (1, 1)}

    def test_lower_error_wins(self):
        m = ek.match_one_to_one([[0.3, 0.1]], 0.4)
        assert [(i, j) for i, j, _ in m] == [(0, 1)]

    def test_ties_by_index(self):
        m = ek.match_one_to_one([[0.2, 0.2], [0.2, 0.2]], 0.4)
        assert [(i, j) for i, j, _ in m] == [(0, 0), (1, 1)]


def brute_greedy(errors, eps):
    """Repeatedly take the smallest remaining admissible pair; no sorting, no shared code."""
    n, m = len(errors), len(errors[0]) if len(errors) else 0
    used_i, used_j, out = set(), set(), []
    while True:
        best = None
        for i in range(n):
            if i in used_i:
                continue
            for j in range(m):
                if j in used_j or not errors[i][j] < eps:
                    continue
                if best is None or (errors[i][j], i, j) < best:
                    best = (errors[i][j], i, j)
        if best is None:
            return out
        used_i.add(best[1])
        used_j.add(best[2])
        out.append((best[1], best[2]))


def max_matching(errors, eps):
    n = len(errors)
    m = len(errors[0]) if n else 0
    best = 0
    for perm in itertools.permutations(range(max(n, m)), n) if n <= m else []:
        best = max(best, sum(1 for i, j in enumerate(perm) if j < m and errors[i][j] < eps))
    return best


def brute_repeatability(ref, tgt, hm, dims_r, dims_t, top, eps, rho):
    hm = Homography(hm) if not isinstance(hm, Homography) else hm
    ref = sorted(ref, key=lambda k: (-k.score, k.y, k.x))[:top]
    tgt = sorted(tgt, key=lambda k: (-k.score, k.y, k.x))[:top]
    inv = hm.inverse()

    def inside(p, dims):
        return rho <= p[0] < dims[1] - rho and rho <= p[1] < dims[0] - rho

    ref = [k for k in ref if inside(ek.warp_point(hm, (k.x, k.y)), dims_t)]
    tgt = [k for k in tgt if inside(ek.warp_point(inv, (k.x, k.y)), dims_r)]
    if not ref or not tgt:
        return 0, 0.0
    errs = []
    for a in ref:
        cx, cy = ek.warp_point(hm, (a.x, a.y))
        h1 = rho * ek.jacobian_scale(hm, (a.x, a.y))
        row = []
        for b in tgt:
            w = max(0.0, min(cx + h1, b.x + rho) - max(cx - h1, b.x - rho))
            h = max(0.0, min(cy + h1, b.y + rho) - max(cy - h1, b.y - rho))
            inter = w * h
            union = 4 * h1 * h1 + 4 * rho * rho - inter
            row.append((union - inter) / union)
        errs.append(row)
    n = len(brute_greedy(errs, eps))
    return n, n / min(len(ref), len(tgt))


def random_instance(seed):
    rng = np.random.default_rng(seed)
    H, W = 60, 80
    n_r, n_t = rng.integers(0, 21), rng.integers(0, 21)
    ref = [kp(*rng.integers(0, [W, H]), round(rng.uniform(), 2)) for _ in range(n_r)]
    tgt = [kp(*rng.integers(0, [W, H]), round(rng.uniform(), 2)) for _ in range(n_t)]
    # plant near-duplicates so matches actually occur
    tgt += [kp(k.x + rng.integers(-2, 3), k.y + rng.integers(-2, 3), k.score) for k in ref[: n_r // 2]]
    tgt = [k for k in tgt if 0 <= k.x < W and 0 <= k.y < H][:20]
    hm = Homography([[1 + rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-2, 2)],
                     [rng.uniform(-0.02, 0.02), 1 + rng.uniform(-0.02, 0.02), rng.uniform(-2, 2)],
                     [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1]])
    return ref, tgt, hm, (H, W)


def test_brute_force_oracle_200_instances():
    for seed in range(200):
        ref, tgt, hm, dims = random_instance(seed)
        res = ek.repeatability(ref, tgt, hm, dims, dims, top=15, eps=0.4, rho=4.0)
        n, rep = brute_repeatability(ref, tgt, hm, dims, dims, 15, 0.4, 4.0)
        assert res.n_matches == n, seed
        assert res.repeatability == pytest.approx(rep)


def test_greedy_is_half_approximation():
    rng = np.random.default_rng(0)
    for _ in range(50):
        e = rng.uniform(0, 0.8, (rng.integers(1, 6), 6)).tolist()
        g = len(ek.match_one_to_one(e, 0.4))
        assert 2 * g >= max_matching(e, 0.4) >= g


class TestRepeatability:
    def test_identity_self(self):
        pts = [kp(10 + 5 * i, 20 + 3 * i, 1 - i / 100) for i in range(10)]
        res = ek.repeatability(pts, pts, np.eye(3), (100, 100), (100, 100))
        assert res.repeatability == 1.0

    def test_min_denominator(self):
        rng = np.random.default_rng(0)
        ref = [kp(10 + 8 * i, 50, 0.9) for i in range(10)]
        others = [kp(*rng.uniform(5, 995, 2), 0.5) for _ in range(990)]
        res = ek.repeatability(ref, ref + others, np.eye(3), (1000, 1000), (1000, 1000), top=1000)
        assert res.n_ref == 10 and res.repeatability == 1.0

    def test_empty_is_zero(self):
        res = ek.repeatability([], [kp(5, 5)], np.eye(3), (10, 10), (10, 10))
        assert res.repeatability == 0.0 and res.matches == []

    def test_top_k_before_filter(self):
        ref = [kp(1, 1, 0.9), kp(50, 50, 0.5)]
        res = ek.repeatability(ref, [kp(50, 50)], np.eye(3), (100, 100), (100, 100), top=1)
        # the top-1 reference keypoint sits in the border margin, leaving nothing to match
        assert res.n_ref == 0 and res.repeatability == 0.0

    def test_match_result_invariants(self):
        for seed in range(20):
            ref, tgt, hm, dims = random_instance(seed)
            res = ek.repeatability(ref, tgt, hm, dims, dims)
            assert len({i for i, _, _ in res.matches}) == res.n_matches
            assert len({j for _, j, _ in res.matches}) == res.n_matches
            assert all(e < 0.4 for _, _, e in res.matches)
            assert 0.0 <= res.repeatability <= 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.6), st.floats(0.05, 0.6))
    def test_monotone_in_eps(self, seed, e1, e2):
        ref, tgt, hm, dims = random_instance(seed)
        lo, hi = sorted((e1, e2))
        a = ek.repeatability(ref, tgt, hm, dims, dims, eps=lo)
        b = ek.repeatability(ref, tgt, hm, dims, dims, eps=hi)
        assert a.n_matches <= b.n_matches

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric_under_swap(self, seed):
        rng = np.random.default_rng(seed)
        # translations keep both squares the same size, so the error matrix transposes exactly;
        # continuous jitter breaks greedy ties
        ref = [kp(*rng.uniform(0, 60, 2), rng.uniform()) for _ in range(12)]
        tgt = [kp(k.x + 3 + rng.normal(0, 1.5), k.y - 2 + rng.normal(0, 1.5), rng.uniform()) for k in ref]
        hm = Homography.translation(3, -2)
        a = ek.repeatability(ref, tgt, hm, (60, 60), (60, 60))
        b = ek.repeatability(tgt, ref, hm.inverse(), (60, 60), (60, 60))
        assert a.n_matches == b.n_matches and a.repeatability == pytest.approx(b.repeatability)
