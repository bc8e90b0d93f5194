import numpy as np

from jkolab import certify as ct
from jkolab import functionals as fn
from jkolab import gaussian as ga
from jkolab import process as pr
from jkolab import quantile as qt
from jkolab import serialize as sz


def kl_spec(lam=1.0, d=1):
    return fn.ObjectiveSpec(fn.QuadraticPotential(lam * np.eye(d), np.zeros(d)))


def gauss_traj(n=3, eps=0.1):
    p0 = ga.GaussianMeasure(np.array([2.0]), np.array([[4.0]]))
    return pr.run_forward(p0, kl_spec(), 1.0, n, eps_schedule=eps)


def grid_traj(n=2):
    p0 = qt.from_gaussian(1.0, 1.5, 64)
    return pr.run_forward(p0, kl_spec(), 1.0, n)


class TestSpecRoundTrip:
    def test_identity(self):
        spec = fn.ObjectiveSpec(
            fn.QuadraticPotential(np.array([[2.0, 0.3], [0.3, 1.0]]),
                                  np.array([0.5, -1.0])),
            fn.Variant.WEIGHTED, 1.5)
        back = sz.spec_from_dict(sz.spec_to_dict(spec))
        assert back.variant == spec.variant
        assert back.alpha == spec.alpha
        assert np.array_equal(back.potential.lambda_mat, spec.potential.lambda_mat)
        assert np.array_equal(back.potential.center, spec.potential.center)


class TestTrajectoryRoundTrip:
    def test_gaussian_bit_exact(self):
        traj = gauss_traj()
        back = sz.trajectory_from_json(sz.trajectory_to_json(traj))
        assert back.gamma == traj.gamma and back.family == traj.family
        assert back.xi_norms == traj.xi_norms
        assert back.solver_iterations == traj.solver_iterations
        for a, b in zip(traj.measures, back.measures):
            assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
        for a, b in zip(traj.transports, back.transports):
            assert np.array_equal(a.linear, b.linear)
            assert np.array_equal(a.offset, b.offset)

    def test_grid_bit_exact(self):
        traj = grid_traj()
        back = sz.trajectory_from_json(sz.trajectory_to_json(traj))
        for a, b in zip(traj.measures, back.measures):
            assert np.array_equal(a.values, b.values)
        for a, b in zip(traj.transports, back.transports):
            assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_checks_reproduce_after_round_trip(self):
        traj = gauss_traj()
        back = sz.trajectory_from_json(sz.trajectory_to_json(traj))
        q = fn.global_minimizer(traj.spec)
        r1 = ct.check_evi(traj, q)
        r2 = ct.check_evi(back, q)
        for a, b in zip(r1, r2):
            assert a.lhs == b.lhs and a.rhs == b.rhs and a.holds == b.holds


class TestReverseRoundTrip:
    def test_bit_exact(self):
        traj = gauss_traj()
        rev = pr.run_reverse_perturbed(traj, 1e-3)
        back = sz.reverse_from_json(sz.reverse_to_json(rev))
        assert back.exact == rev.exact
        assert back.residuals == rev.residuals
        for a, b in zip(rev.measures, back.measures):
            assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)
