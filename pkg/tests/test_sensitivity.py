import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netsense.nn import Mlp, forward, init_network, logit_input_jacobian, region_code, region_codes, softmax
from netsense.sensitivity import (
    boundary_map,
    count_transitions,
    curvature_estimate,
    jacobian_norm,
    jacobian_norms,
    mean_jacobian_norm,
    mean_transitions,
    sensitivity_profile,
)
from netsense.trajectory import SamplingError, Trajectory, plane_grid, random_ellipse, translation_trajectory

PIECEWISE = ["relu", "relu6", "hard_tanh", "hard_sigmoid"]


def naive_transitions(m, points):
    codes = [region_code(m, p).codes.astype(int) for p in points]
    k = len(codes)
    return sum(int(np.abs(codes[i] - codes[(i + 1) % k]).sum()) for i in range(k))


def single_relu(d=5, n=3, seed=0):
    rng = np.random.default_rng(seed)
    w, v = rng.normal(size=(1, d)), rng.normal(size=(n, 1))
    return Mlp((d, 1, n), (w, v), "relu"), w, v


def perturbation_ratio(m, x, eps, draws, rng):
    base = softmax(forward(m, x).logits)
    dx = rng.normal(scale=math.sqrt(eps), size=(draws, x.size))
    out = softmax(forward(m, x + dx).logits)
    return np.mean(np.sum((out - base) ** 2, axis=1)) / eps / jacobian_norm(m, x) ** 2


class TestJacobianNorm:
    def test_two_class_identity(self):
        assert jacobian_norm(Mlp((2, 2), (np.eye(2),), "relu"), np.zeros(2)) == pytest.approx(0.5)

    def test_saturated_softmax(self):
        net = Mlp((2, 2), (np.array([[60.0, 0.0], [0.0, 0.0]]),), "relu")
        assert jacobian_norm(net, np.array([1.0, 0.3])) < 1e-15

    @pytest.mark.parametrize("act", ["relu", "tanh", "hard_sigmoid"])
    def test_gaussian_perturbation(self, act):
        rng = np.random.default_rng(7)
        net = init_network((8, 16, 16, 5), act, seed=2)
        for _ in range(3):
            assert perturbation_ratio(net, rng.normal(size=8), 1e-8, 10_000, rng) == pytest.approx(1.0, abs=0.05)

    def test_report_mean(self, rng):
        net = init_network((4, 6, 3), "relu6", seed=0)
        pts = rng.normal(size=(30, 4))
        rep = mean_jacobian_norm(net, pts)
        assert rep.point_count == 30
        assert rep.mean_norm == pytest.approx(np.mean(rep.per_point_norms), rel=1e-12)
        assert mean_jacobian_norm(net, pts[:1]).mean_norm == rep.per_point_norms[0]
        assert mean_jacobian_norm(net, np.vstack([pts, pts])).mean_norm == pytest.approx(rep.mean_norm, rel=1e-15)

    def test_empty_points(self):
        with pytest.raises(ValueError):
            mean_jacobian_norm(init_network((3, 2), "relu"), np.zeros((0, 3)))

    def test_chunking_does_not_matter(self, rng):
        net = init_network((4, 6, 3), "relu", seed=0)
        pts = rng.normal(size=(50, 4))
        np.testing.assert_allclose(jacobian_norms(net, pts, chunk=7), jacobian_norms(net, pts), rtol=1e-14)

    def test_mnist_matches_naive_loop(self, small_mnist_net, mnist):
        pts = mnist[1].inputs[:100]
        naive = []
        for x in pts:
            s = softmax(forward(small_mnist_net, x).logits)
            jac = (np.diag(s) - np.outer(s, s)) @ logit_input_jacobian(small_mnist_net, x)
            naive.append(math.sqrt(sum(float(v) ** 2 for v in jac.ravel())))
        rep = mean_jacobian_norm(small_mnist_net, pts)
        np.testing.assert_allclose(rep.per_point_norms, naive, rtol=1e-12)
        assert rep.mean_norm == pytest.approx(math.fsum(naive) / 100, rel=1e-12)


class TestTransitions:
    def test_constant_trajectory(self):
        net = init_network((4, 8, 3), "relu", seed=0)
        assert count_transitions(net, Trajectory(np.ones((10, 4)))).total == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_single_unit_crosses_twice(self, seed):
        net, _, _ = single_relu(seed=seed)
        res = count_transitions(net, random_ellipse(5, 600, seed=seed + 100))
        assert res.total == 2
        np.testing.assert_array_equal(res.per_neuron, [2])

    @pytest.mark.parametrize("act", PIECEWISE + ["tanh"])
    def test_matches_naive_oracle_and_parity(self, act):
        net = init_network((6, 12, 12, 4), act, std_multiplier=2.0, seed=1)
        t = random_ellipse(6, 240, seed=2)
        res = count_transitions(net, t, chunk=37)
        assert res.total == naive_transitions(net, t.points)
        assert res.total == res.per_neuron.sum() == res.per_arc.sum()
        assert np.all(res.per_neuron % 2 == 0)
        assert res.k_used == 240

    def test_per_arc_positions(self):
        net, w, _ = single_relu()
        t = random_ellipse(5, 60, seed=3)
        res = count_transitions(net, t)
        signs = (t.points @ w[0] >= 0).astype(int)
        want = np.abs(signs - np.roll(signs, -1))
        np.testing.assert_array_equal(res.per_arc, want)

    def test_too_few_samples(self):
        with pytest.raises(SamplingError):
            count_transitions(init_network((2, 3, 2), "relu"), np.zeros((2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), shift=st.integers(0, 199), act=st.sampled_from(PIECEWISE))
    def test_rotation_invariant_and_even(self, seed, shift, act):
        net = init_network((5, 10, 10, 3), act, std_multiplier=2.0, seed=seed)
        t = random_ellipse(5, 200, seed=seed)
        a = count_transitions(net, t)
        b = count_transitions(net, t.rotated(shift))
        assert a.total == b.total
        np.testing.assert_array_equal(a.per_neuron, b.per_neuron)
        assert np.all(a.per_neuron % 2 == 0)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), log_k=st.integers(3, 9))
    def test_refinement_never_decreases(self, seed, log_k):
        net = init_network((5, 16, 16, 3), "relu", std_multiplier=2.0, seed=seed)
        k = 2**log_k
        assert count_transitions(net, random_ellipse(5, 2 * k, seed)).total >= count_transitions(
            net, random_ellipse(5, k, seed)
        ).total

    def test_translation_loop_parity(self, small_mnist_net, mnist):
        t = translation_trajectory(mnist[1].inputs[0], 28, 28, 224)
        res = count_transitions(small_mnist_net, t)
        assert np.all(res.per_neuron % 2 == 0)
        assert res.total == naive_transitions(small_mnist_net, t.points)

    def test_mean_transitions(self):
        net = init_network((4, 8, 3), "relu", seed=0)
        t1, t2 = random_ellipse(4, 50, 1), random_ellipse(4, 50, 2)
        a, b = count_transitions(net, t1).total, count_transitions(net, t2).total
        assert mean_transitions(net, [t1]) == a
        assert mean_transitions(net, [t1, t1]) == a
        assert mean_transitions(net, [t1, t2]) == (naive_transitions(net, t1.points) + naive_transitions(net, t2.points)) / 2
        assert mean_transitions(net, [t1, t2]) == (a + b) / 2
        with pytest.raises(ValueError):
            mean_transitions(net, [])

    def test_layer_restriction(self):
        net = init_network((4, 8, 6, 3), "relu", seed=0)
        t = random_ellipse(4, 80, 1)
        full = count_transitions(net, t)
        last = count_transitions(net, t, layers=[1])
        np.testing.assert_array_equal(last.per_neuron, full.per_neuron[8:])


class TestProfile:
    def test_buckets(self):
        net = init_network((4, 8, 3), "relu", std_multiplier=2.0, seed=0)
        t = random_ellipse(4, 120, seed=1)
        total = count_transitions(net, t).total
        assert sensitivity_profile(net, t, 120).densities.tolist() == [total]
        prof = sensitivity_profile(net, t, 12)
        assert prof.n_buckets == 10 and prof.densities.sum() == total
        np.testing.assert_allclose(prof.norms, jacobian_norms(net, t.points))

    def test_window_must_divide(self):
        net = init_network((4, 3), "relu")
        with pytest.raises(ValueError):
            sensitivity_profile(net, random_ellipse(4, 10, 0), 3)


class TestCurvature:
    def test_linear_layer(self, rng):
        net = Mlp((4, 3), (rng.normal(size=(3, 4)),), "relu")
        assert curvature_estimate(net, random_ellipse(4, 50, 0)) == 0.0

    def test_single_region(self):
        net = init_network((4, 8, 3), "hard_tanh", seed=0)
        pts = 1e-9 * random_ellipse(4, 30, 1).points + np.array([0.3, -0.1, 0.2, 0.5])
        codes = region_codes(net, pts)
        assert (codes == codes[0]).all()
        assert curvature_estimate(net, pts) == pytest.approx(0.0, abs=1e-9)

    def test_single_unit_kink(self):
        net, w, v = single_relu(seed=4)
        # the two affine pieces have Jacobians 0 and v w
        jump = np.linalg.norm(v @ w)
        assert curvature_estimate(net, random_ellipse(5, 600, seed=9), chunk=64) == pytest.approx(2 * 0.5 * jump, rel=1e-12)


class TestBoundaryMap:
    def _grid(self, d=6, res=20, seed=0):
        return plane_grid(*np.random.default_rng(seed).normal(size=(3, d)), res)

    def test_zero_network(self):
        net = Mlp((6, 5, 3), (np.zeros((5, 6)), np.zeros((3, 5))), "relu")
        bm = boundary_map(net, self._grid())
        assert not bm.mask.any() and (bm.labels == 0).all()

    @pytest.mark.parametrize("selector", ["last_hidden", "all"])
    def test_mask_matches_pairwise_scan(self, selector):
        net = init_network((6, 10, 10, 3), "relu", seed=2)
        grid = self._grid()
        bm = boundary_map(net, grid, selector)
        layers = [1] if selector == "last_hidden" else None
        codes = region_codes(net, grid.points, layers).reshape(20, 20, -1)
        count = 0
        for r in range(20):
            for c in range(20):
                nbrs = [(r + dr, c + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))]
                count += any(
                    0 <= rr < 20 and 0 <= cc < 20 and (codes[r, c] != codes[rr, cc]).any() for rr, cc in nbrs
                )
        assert bm.mask.sum() == count
        assert bm.labels.shape == (20, 20)

    def test_labels_in_first_appearance_order(self):
        net = init_network((6, 10, 3), "relu", seed=2)
        labels = boundary_map(net, self._grid()).labels.reshape(-1)
        seen = []
        for v in labels:
            if v not in seen:
                seen.append(v)
        assert seen == list(range(len(seen)))

    def test_different_networks_differ(self):
        grid = self._grid()
        a = boundary_map(init_network((6, 10, 3), "relu", seed=1), grid)
        b = boundary_map(init_network((6, 10, 3), "relu", seed=2), grid)
        assert a.mask.any() and not np.array_equal(a.mask, b.mask)

    def test_bad_selector(self):
        with pytest.raises(ValueError):
            boundary_map(init_network((6, 3), "relu"), self._grid(), "first")
