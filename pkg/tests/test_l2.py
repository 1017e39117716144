import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import damper_closed_form
from vsplines.exceptions import AssumptionError, QuadratureError
from vsplines.forward import Grid, MeasurementFunctional, build_system, simulate_data
from vsplines.l2 import L2Kernel, compare_l1_l2, l2_fit, l2_gram, l2_solve
from vsplines.mdo import MatrixOperator, greens_matrix, nullspace_basis
from vsplines.norms import NormSpec, VectorAtomicMeasure
from vsplines.odo import OdoPoly
from vsplines.solver import SolveConfig, fista_solve, lambda_max


def scalar(p):
    L = MatrixOperator.diagonal([OdoPoly(p)])
    return greens_matrix(L), nullspace_basis(L)


def samples(ts):
    return [MeasurementFunctional.sampling([1.0], t) for t in ts]


class TestGram:
    def test_derivative_kernel(self):
        G, basis = scalar((0, 1))
        K, P, _ = l2_gram(G, basis, samples([0.0, 1.0]), window_start=-2.0)
        np.testing.assert_allclose(K, [[2.0, 2.0], [2.0, 3.0]], atol=1e-12)
        assert K[1, 1] / K[0, 0] == pytest.approx(1.5, abs=1e-12)
        np.testing.assert_allclose(P @ P.T / P[0, 0] ** 2, 1.0)

    @settings(max_examples=10, deadline=None)
    @given(st.lists(st.floats(0, 2), min_size=2, max_size=6, unique=True))
    def test_symmetric_psd(self, ts):
        G, basis = scalar((0, 0, 1))
        K, _, _ = l2_gram(G, basis, samples(ts))
        assert np.max(np.abs(K - K.T)) <= 1e-7 * np.abs(K).max()
        ev = np.linalg.eigvalsh(K)
        assert ev.min() >= -1e-7 * ev.max()

    def test_damper_against_direct_convolution(self, damper):
        GP = damper["G"].times_constant(damper["P"])
        tm = 1.0
        ker = L2Kernel(GP, damper["basis"], [MeasurementFunctional.sampling([1, 0, 0, 0], tm)], window_start=-3.0)

        def direct(t, r):
            def f(tau):
                return damper_closed_form(t - tau)[0, r, 2] * damper_closed_form(tm - tau)[0, 0, 2]
            hi = min(t, tm)
            val, _ = scipy.integrate.quad(f, -3.0, hi, epsabs=1e-12, epsrel=1e-11, limit=200)
            return val

        for t in np.linspace(-1.0, 2.5, 10):
            got = ker.kernel_columns(t)[:, 0]
            ref = np.array([direct(t, r) for r in range(4)])
            np.testing.assert_allclose(got, ref, atol=1e-5)

    def test_quadrature_rejected(self):
        G, basis = scalar((0, 0, 1))
        with pytest.raises(ValueError, match="sampling"):
            L2Kernel(G, basis, [MeasurementFunctional.quadrature(0, (0.0, 1.0))])


class TestSolve:
    def test_interpolates_at_zero_lambda(self, recovery_problem):
        p = recovery_problem
        res = l2_fit(p["G"], p["basis"], p["nus"], p["y"], 0.0)
        assert np.max(np.abs(p["y"] - res.fitted)) <= 1e-7 * np.linalg.norm(p["y"])

    def test_reconstruction_matches_fitted(self, recovery_problem):
        p = recovery_problem
        res = l2_fit(p["G"], p["basis"], p["nus"], p["y"], 1e-3)
        F = res.reconstruct(np.linspace(0, 1, 6))
        got = np.concatenate([F[:, 0], F[:, 1]])
        np.testing.assert_allclose(got, res.fitted, atol=1e-9 * np.abs(res.fitted).max())

    @pytest.mark.parametrize("lam", [0.0, 1e-3, 10.0])
    def test_null_space_reproduced(self, recovery_problem, lam):
        p = recovery_problem
        q = np.array([0.7, -0.4, 1.1, 0.2])
        y = simulate_data((VectorAtomicMeasure(2), q), p["G"], p["basis"], p["nus"])
        res = l2_fit(p["G"], p["basis"], p["nus"], y, lam)
        assert np.max(np.abs(res.alpha)) <= 1e-8
        np.testing.assert_allclose(res.beta, q, atol=1e-8)

    def test_null_space_limit(self):
        # M = N with an invertible null matrix: the interpolant lives in the null space
        G, basis = scalar((0, 0, 1))
        res = l2_fit(G, basis, samples([0.2, 0.9]), np.array([1.0, -2.0]), 1e-12)
        assert np.max(np.abs(res.alpha)) <= 1e-8

    def test_permutation_invariance(self, recovery_problem):
        p = recovery_problem
        perm = np.random.default_rng(0).permutation(len(p["nus"]))
        r1 = l2_fit(p["G"], p["basis"], p["nus"], p["y"], 1e-2)
        r2 = l2_fit(p["G"], p["basis"], [p["nus"][i] for i in perm], p["y"][perm], 1e-2)
        t = np.linspace(-0.2, 1.2, 9)
        np.testing.assert_allclose(r2.reconstruct(t), r1.reconstruct(t), atol=1e-9)

    def test_zero_data(self, recovery_problem):
        p = recovery_problem
        res = l2_fit(p["G"], p["basis"], p["nus"], np.zeros(12), 0.1)
        assert not np.any(res.reconstruct([0.3, 0.8]))

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            l2_solve(np.eye(2), np.ones((2, 1)), np.ones(2), -1.0)

    def test_singular_system(self):
        with pytest.raises(AssumptionError, match="singular"):
            l2_solve(np.ones((2, 2)), np.ones((2, 1)), np.ones(2), 0.0)

    @pytest.mark.parametrize("poly", [(-1, 1), (1, 0, 1), (1, 1)], ids=["growing", "oscillating", "decaying"])
    def test_window_invariance(self, poly):
        # the window-dependent part of the kernel lies in the null space and is removed by P^T alpha = 0
        G, basis = scalar(poly)
        nus = samples([0.0, 0.4, 0.5, 1.0])
        y = np.array([1.0, 0.0, -0.5, 2.0])
        r1 = l2_fit(G, basis, nus, y, 1.0, window_start=-2.0, check_window=False)
        r2 = l2_fit(G, basis, nus, y, 1.0, window_start=-6.0, check_window=False)
        np.testing.assert_allclose(r1.fitted, r2.fitted, atol=1e-7 * np.linalg.norm(y))

    def test_window_check_raises(self, monkeypatch):
        import vsplines.l2 as l2mod

        G, basis = scalar((1, 1))
        real = l2mod.l2_solve
        calls = []

        def perturbed(K, P, y, lam):
            calls.append(1)
            a, b = real(K, P, y, lam)
            return (a * 1.01, b) if len(calls) == 2 else (a, b)

        monkeypatch.setattr(l2mod, "l2_solve", perturbed)
        with pytest.raises(QuadratureError, match="window"):
            l2_fit(G, basis, samples([0.0, 0.5, 1.0]), np.array([1.0, 0.0, 2.0]), 1.0)


class TestCompare:
    @pytest.fixture(scope="class")
    @staticmethod
    def single_atom():
        G, basis = scalar((0, 0, 1))
        nus = samples(np.linspace(0, 1, 11))
        mats = build_system(G, basis, nus, Grid(0.0, 0.01, 101))
        y = simulate_data((VectorAtomicMeasure(1, [(0.3, 0, 2.0)]), np.array([0.5, -1.0])), G, basis, nus)
        return G, basis, nus, mats, y

    def test_sparse_versus_dense(self, single_atom):
        G, basis, nus, mats, y = single_atom
        tv = fista_solve(mats, y, SolveConfig(lam=1e-6 * lambda_max(mats, y, NormSpec())))
        l2 = l2_fit(G, basis, nus, y, 0.0)
        rep = compare_l1_l2(tv, l2, mats, y, np.linspace(0, 1, 5))
        assert rep["tv_knots"] == 1
        assert rep["l2_active_coefficients"] >= mats.M - 1
        assert rep["tv_refit_residual"] <= 1e-5 * np.linalg.norm(y)
        assert rep["l2_refit_residual"] <= 1e-5 * np.linalg.norm(y)
        assert rep["l2_parameter_count"] == mats.M + mats.N
        assert len(rep["tv_reconstruction"]) == 5

    def test_zero_data(self, single_atom):
        G, basis, nus, mats, _ = single_atom
        y = np.zeros(mats.M)
        tv = fista_solve(mats, y, SolveConfig(lam=1.0))
        l2 = l2_fit(G, basis, nus, y, 0.1)
        rep = compare_l1_l2(tv, l2, mats, y, np.linspace(0, 1, 4))
        assert not np.any(rep["tv_reconstruction"]) and not np.any(rep["l2_reconstruction"])
        assert rep["tv_knots"] == 0 and rep["l2_active_coefficients"] == 0
