import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jkolab import functionals as fn
from jkolab import gaussian as ga


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T + 0.3 * np.eye(d))


@st.composite
def gaussians(draw, d=2):
    seed = draw(st.integers(0, 10_000))
    rng = np.random.default_rng(seed)
    return ga.GaussianMeasure(rng.uniform(-2, 2, d), random_spd(rng, d))


def std_spec(d=1):
    return fn.ObjectiveSpec(fn.QuadraticPotential(np.eye(d), np.zeros(d)))


class TestGaussianMeasure:
    def test_symmetrizes(self):
        g = ga.GaussianMeasure(np.zeros(2), np.array([[1.0, 0.1 + 1e-14], [0.1, 1.0]]))
        assert np.array_equal(g.cov, g.cov.T)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            ga.GaussianMeasure(np.zeros(2), np.array([[1.0, 0.5], [-0.5, 1.0]]))

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValueError):
            ga.GaussianMeasure(np.zeros(2), np.diag([1.0, -0.5]))

    def test_degenerate_allowed_but_flagged(self):
        g = ga.GaussianMeasure(np.zeros(2), np.zeros((2, 2)))
        assert not g.is_nondegenerate()
        with pytest.raises(ValueError):
            g.require_nondegenerate()


class TestW2Bw:
    def test_self_zero(self):
        g = ga.GaussianMeasure(np.ones(3), np.eye(3))
        assert ga.w2_bw(g, g) == pytest.approx(0, abs=1e-12)

    def test_translation(self):
        g1 = ga.GaussianMeasure(np.array([0.0, 0.0]), np.eye(2))
        g2 = ga.GaussianMeasure(np.array([3.0, 4.0]), np.eye(2))
        assert ga.w2_bw(g1, g2) == pytest.approx(5.0, abs=1e-12)

    def test_one_dim_scale(self):
        g1 = ga.GaussianMeasure(np.zeros(1), np.array([[1.0]]))
        g2 = ga.GaussianMeasure(np.zeros(1), np.array([[4.0]]))
        assert ga.w2_bw(g1, g2) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_endpoint(self):
        g1 = ga.GaussianMeasure(np.array([1.0, 0.0]), np.diag([2.0, 3.0]))
        point = ga.GaussianMeasure(np.array([0.0, 1.0]), np.zeros((2, 2)))
        expected = np.sqrt(1 + 1 + 2 + 3)
        assert ga.w2_bw(g1, point) == pytest.approx(expected, abs=1e-10)

    def test_rotated_covariance_vs_assignment_oracle(self):
        from jkolab import oracles as orc
        th = np.pi / 4
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        g1 = ga.GaussianMeasure(np.zeros(2), np.diag([1.0, 4.0]))
        g2 = ga.GaussianMeasure(np.zeros(2), rot @ np.diag([1.0, 4.0]) @ rot.T)
        # common random numbers keep the sampling noise correlated
        rng = np.random.default_rng(0)
        z = rng.standard_normal((2000, 2))
        s1 = z @ np.linalg.cholesky(g1.cov).T
        s2 = z @ np.linalg.cholesky(g2.cov).T
        emp = orc.assignment_w2(s1, s2)
        assert emp == pytest.approx(ga.w2_bw(g1, g2), rel=0.02)

    @settings(max_examples=25, deadline=None)
    @given(gaussians(), gaussians(), gaussians())
    def test_triangle_inequality(self, a, b, c):
        assert ga.w2_bw(a, c) <= ga.w2_bw(a, b) + ga.w2_bw(b, c) + 1e-9


class TestOtMapBw:
    def test_identity(self):
        g = ga.GaussianMeasure(np.ones(2), np.diag([1.0, 2.0]))
        t = ga.ot_map_bw(g, g)
        assert np.allclose(t.linear, np.eye(2), atol=1e-12)
        assert np.allclose(t.offset, 0, atol=1e-12)

    def test_scalar_case(self):
        g1 = ga.GaussianMeasure(np.zeros(1), np.array([[4.0]]))
        g2 = ga.GaussianMeasure(np.zeros(1), np.array([[9.0]]))
        assert ga.ot_map_bw(g1, g2).linear[0, 0] == pytest.approx(1.5, abs=1e-12)

    def test_pushforward_reaches_target(self):
        rng = np.random.default_rng(3)
        g1 = ga.GaussianMeasure(rng.uniform(-1, 1, 3), random_spd(rng, 3))
        g2 = ga.GaussianMeasure(rng.uniform(-1, 1, 3), random_spd(rng, 3))
        pushed = ga.pushforward_affine(g1, ga.ot_map_bw(g1, g2))
        assert np.allclose(pushed.mean, g2.mean, atol=1e-10)
        assert np.allclose(pushed.cov, g2.cov, atol=1e-10)

    def test_inverse_composition(self):
        rng = np.random.default_rng(4)
        g1 = ga.GaussianMeasure(rng.uniform(-1, 1, 2), random_spd(rng, 2))
        g2 = ga.GaussianMeasure(rng.uniform(-1, 1, 2), random_spd(rng, 2))
        comp = ga.compose_affine(ga.ot_map_bw(g2, g1), ga.ot_map_bw(g1, g2))
        assert np.allclose(comp.linear, np.eye(2), atol=1e-10)
        assert np.allclose(comp.offset, 0, atol=1e-10)

    def test_transport_cost_identity(self):
        # E||x - T(x)||^2 under g1 equals W2^2, closed form
        rng = np.random.default_rng(5)
        g1 = ga.GaussianMeasure(rng.uniform(-1, 1, 3), random_spd(rng, 3))
        g2 = ga.GaussianMeasure(rng.uniform(-1, 1, 3), random_spd(rng, 3))
        t = ga.ot_map_bw(g1, g2)
        a_minus_i = t.linear - np.eye(3)
        disp = t.offset + a_minus_i @ g1.mean
        cost = disp @ disp + np.trace(a_minus_i @ g1.cov @ a_minus_i.T)
        assert cost == pytest.approx(ga.w2_bw(g1, g2) ** 2, abs=1e-10)

    def test_singular_source_rejected(self):
        g1 = ga.GaussianMeasure(np.zeros(2), np.zeros((2, 2)))
        g2 = ga.GaussianMeasure(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            ga.ot_map_bw(g1, g2)


class TestKl:
    def test_at_minimizer_zero(self):
        spec = std_spec(2)
        g = fn.global_minimizer(spec)
        assert ga.kl_gaussian(g, spec) == pytest.approx(0, abs=1e-12)

    def test_one_dim_mean_shift(self):
        g = ga.GaussianMeasure(np.array([1.0]), np.eye(1))
        assert ga.kl_gaussian(g, std_spec(1)) == pytest.approx(0.5, abs=1e-12)

    def test_two_dim_closed_form(self):
        g = ga.GaussianMeasure(np.zeros(2), np.diag([4.0, 1.0]))
        expected = 0.5 * (5 - 2 - np.log(4))
        assert ga.kl_gaussian(g, std_spec(2)) == pytest.approx(expected, abs=1e-12)

    def test_kl_between_general(self):
        g1 = ga.GaussianMeasure(np.array([1.0]), np.array([[2.0]]))
        g2 = ga.GaussianMeasure(np.array([0.0]), np.array([[1.0]]))
        expected = 0.5 * (2 + 1 - 1 - np.log(2))
        assert ga.kl_between(g1, g2) == pytest.approx(expected, abs=1e-12)


class TestSubgradientField:
    def test_zero_at_minimizer(self):
        spec = std_spec(3)
        fld = ga.subgradient_field(fn.global_minimizer(spec), spec)
        g = fn.global_minimizer(spec)
        assert ga.field_l2_norm(fld, g) <= 1e-12

    def test_constant_field_for_mean_shift(self):
        g = ga.GaussianMeasure(np.array([1.0]), np.eye(1))
        fld = ga.subgradient_field(g, std_spec(1))
        assert np.allclose(fld.linear, 0, atol=1e-12)
        assert fld.offset[0] == pytest.approx(1.0, abs=1e-12)

    def test_finite_difference_agreement(self):
        from jkolab import oracles as orc
        rng = np.random.default_rng(11)
        for _ in range(20):
            d = rng.integers(1, 4)
            spec = fn.ObjectiveSpec(
                fn.QuadraticPotential(random_spd(rng, d), rng.uniform(-1, 1, d)))
            g = ga.GaussianMeasure(rng.uniform(-1, 1, d), random_spd(rng, d))
            v = ga.AffineMap(0.3 * rng.standard_normal((d, d)),
                             0.3 * rng.standard_normal(d))
            fld = ga.subgradient_field(g, spec)
            inner = float(
                (fld.linear @ g.mean + fld.offset) @ (v.linear @ g.mean + v.offset)
                + np.trace(fld.linear @ g.cov @ v.linear.T))
            fd = orc.fd_directional(spec, g, v, 1e-5)
            assert fd == pytest.approx(inner, abs=1e-7, rel=1e-6)


class TestFieldNorm:
    def test_zero_field(self):
        g = ga.GaussianMeasure(np.ones(2), np.eye(2))
        assert ga.field_l2_norm(ga.AffineMap(np.zeros((2, 2)), np.zeros(2)), g) == 0

    def test_constant_field(self):
        g = ga.GaussianMeasure(np.array([5.0, -1.0]), 3 * np.eye(2))
        c = np.array([3.0, 4.0])
        assert ga.field_l2_norm(ga.AffineMap(np.zeros((2, 2)), c), g) == pytest.approx(5.0)

    def test_identity_field_on_standard_normal(self):
        for d in (1, 2, 3, 8):
            g = ga.GaussianMeasure(np.zeros(d), np.eye(d))
            fld = ga.AffineMap(np.eye(d), np.zeros(d))
            assert ga.field_l2_norm(fld, g) == pytest.approx(np.sqrt(d), abs=1e-12)


class TestPushforwardAffine:
    @settings(max_examples=25, deadline=None)
    @given(gaussians())
    def test_mean_cov_exact(self, g):
        rng = np.random.default_rng(0)
        t = ga.AffineMap(rng.standard_normal((2, 2)), rng.standard_normal(2))
        pushed = ga.pushforward_affine(g, t)
        assert np.allclose(pushed.mean, t.linear @ g.mean + t.offset, atol=1e-12)
        assert np.allclose(pushed.cov, t.linear @ g.cov @ t.linear.T, atol=1e-12)
