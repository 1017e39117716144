import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import damper_closed_form
from vsplines.exceptions import AdmissibilityError, AssumptionError
from vsplines.forward import (
    Grid,
    LSpline,
    MeasurementFunctional,
    admissibility_check,
    build_system,
    nullspace_injectivity_check,
    simulate_data,
)
from vsplines.genfunc import GeneralizedFunction
from vsplines.mdo import MatrixOperator, NullspaceBasis, greens_matrix, nullspace_basis
from vsplines.norms import VectorAtomicMeasure
from vsplines.odo import OdoPoly

TWO_BY_TWO = [[[0, 0, 1], [0, 0, 0, 0, 1]], [[0], [0, 0, 1]]]


@pytest.fixture(scope="module")
def ramp_system():
    L = MatrixOperator.diagonal([OdoPoly.D(2)])
    return greens_matrix(L), nullspace_basis(L)


@pytest.fixture(scope="module")
def double_ramp():
    L = MatrixOperator.diagonal([OdoPoly.D(2), OdoPoly.D(2)])
    return greens_matrix(L), nullspace_basis(L)


class TestFunctionals:
    def test_zero_sampling_rejected(self):
        with pytest.raises(ValueError):
            MeasurementFunctional.sampling([0, 0], 1.0)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            MeasurementFunctional.quadrature(0, (1.0, 1.0))

    @pytest.mark.parametrize("nu", [
        MeasurementFunctional.sampling([1, 0], 0.5),
        MeasurementFunctional.weighted_sum([(2.0, [1, 1], 0.1), (-1.0, [0, 1], 0.9)]),
        MeasurementFunctional.quadrature(1, (0.0, 2.0), (1.0, 0.5, 2.0)),
    ])
    def test_dict_roundtrip(self, nu):
        assert MeasurementFunctional.from_dict(nu.to_dict()) == nu

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown"):
            MeasurementFunctional.from_dict({"kind": "moment"})


class TestAdmissibility:
    def test_two_by_two(self):
        G = greens_matrix(MatrixOperator.from_coeffs(TWO_BY_TWO))
        bad = admissibility_check(G, MeasurementFunctional.sampling([1, 0], 1.0))
        assert not bad.passed and bad.offending[0][1] == 1
        assert admissibility_check(G, MeasurementFunctional.sampling([0, 1], 1.0)).passed

    def test_damper_position(self, damper):
        nu = MeasurementFunctional.sampling([1, 0, 0, 0], 0.5)
        assert admissibility_check(damper["G"].times_constant(damper["P"]), nu).passed
        # without the control matrix the first column is u(t), which jumps
        full = admissibility_check(damper["G"], nu)
        assert not full.passed and [o[1] for o in full.offending] == [0]

    def test_damper_velocity_sampling_fails(self, damper):
        # velocity rows carry jumps of the dictionary columns
        nu = MeasurementFunctional.sampling([0, 0, 1, 0], 0.5)
        assert not admissibility_check(damper["G"].times_constant(damper["P"]), nu).passed

    def test_quadrature_tolerates_jumps(self):
        G = greens_matrix(MatrixOperator.diagonal([OdoPoly.D(1)]))
        assert admissibility_check(G, MeasurementFunctional.quadrature(0, (0.0, 1.0))).passed
        assert not admissibility_check(G, MeasurementFunctional.sampling([1], 0.5)).passed

    def test_dimension_mismatch(self, damper):
        with pytest.raises(ValueError):
            admissibility_check(damper["G"], MeasurementFunctional.sampling([1, 0], 0.5))

    def test_build_system_rejects(self):
        L = MatrixOperator.from_coeffs(TWO_BY_TWO)
        with pytest.raises(AdmissibilityError, match="measurement 0"):
            build_system(greens_matrix(L), nullspace_basis(L), [MeasurementFunctional.sampling([1, 0], 1.0)],
                         Grid(0.0, 0.1, 3), check_injectivity=False)


class TestInjectivity:
    def test_too_few_samples(self, double_ramp):
        G, basis = double_ramp
        nus = [MeasurementFunctional.sampling([1, 0], t) for t in (0.2, 0.7)]
        B = build_system(G, basis, nus, Grid(0.0, 0.5, 3), check_injectivity=False).B
        rep = nullspace_injectivity_check(B)
        assert not rep.passed and rep.rank <= 2 and rep.N == 4
        with pytest.raises(AssumptionError, match="not injective"):
            build_system(G, basis, nus, Grid(0.0, 0.5, 3))

    def test_mixed_samples(self, double_ramp):
        G, basis = double_ramp
        nus = [MeasurementFunctional.sampling(c, t) for c in ([1, 0], [0, 1]) for t in (0.0, 0.3, 0.6, 1.0)]
        B = build_system(G, basis, nus, Grid(0.0, 0.5, 3)).B
        assert nullspace_injectivity_check(B).passed

    def test_zero_matrix(self):
        rep = nullspace_injectivity_check(np.zeros((5, 2)))
        assert not rep.passed and rep.rank == 0


class TestBuildSystem:
    def test_ramp_entry(self, ramp_system):
        G, basis = ramp_system
        mats = build_system(G, basis, [MeasurementFunctional.sampling([1], 1.0),
                                       MeasurementFunctional.sampling([1], 2.0)], Grid(0.0, 0.5, 3))
        np.testing.assert_allclose(mats.A, [[1.0, 0.5, 0.0], [2.0, 1.5, 1.0]], atol=1e-15)
        assert mats.M == 2 and mats.N == 2 and mats.D_ctrl == 1

    def test_damper_reduced_entry(self, damper):
        nus = [MeasurementFunctional.sampling([1, 0, 0, 0], 1.0)]
        mats = build_system(damper["G"], damper["basis"], nus, Grid(0.0, 0.5, 2), mode="q_reduced",
                            Qdagger=damper["P"], check_injectivity=False)
        hm = (1 - np.exp(-2.0)) / 2
        assert mats.A[0, 0] == pytest.approx(0.5 * (hm + 1.0), abs=1e-14)
        assert mats.A[0, 1] == pytest.approx(damper_closed_form(0.5)[0, 0, 2], abs=1e-14)
        assert mats.D_ctrl == 1

    def test_null_space_row(self, double_ramp):
        # constants (1, 0) and (0, 1) span the null space of Diag(D, D)
        one = GeneralizedFunction([(0.0, 0, [(0.0, 0, 1.0)])])
        basis = NullspaceBasis(2, ((one, GeneralizedFunction()), (GeneralizedFunction(), one)))
        mats = build_system(double_ramp[0], basis, [MeasurementFunctional.sampling([1, 1], 0.3)],
                            Grid(0.0, 0.1, 2), check_injectivity=False)
        np.testing.assert_array_equal(mats.B, [[1.0, 1.0]])

    def test_identity_dagger_matches_full(self, double_ramp):
        G, basis = double_ramp
        nus = [MeasurementFunctional.sampling(c, t) for c in ([1, 0], [0, 1]) for t in (0.0, 0.4, 1.0)]
        full = build_system(G, basis, nus, Grid(0.0, 0.25, 5))
        red = build_system(G, basis, nus, Grid(0.0, 0.25, 5), mode="q_reduced", Qdagger=np.eye(2))
        np.testing.assert_allclose(red.A, full.A, atol=1e-15)
        assert red.fingerprint() == full.fingerprint()

    def test_bad_mode(self, double_ramp):
        G, basis = double_ramp
        with pytest.raises(ValueError):
            build_system(G, basis, [], Grid(0.0, 1.0, 1), mode="reduced")
        with pytest.raises(ValueError):
            build_system(G, basis, [], Grid(0.0, 1.0, 1), mode="q_reduced")

    def test_quadrature_against_scipy(self, damper):
        nu = MeasurementFunctional.quadrature(0, (0.2, 1.7), (1.0, 0.3, 2.0))
        knots = np.array([0.0, 0.5, 1.0])
        col = damper["G"].column(2)
        got = nu.responses(col, knots)
        for x, v in zip(knots, got):
            def f(t):
                return float(nu.weight_function(np.array([t]))[0] * damper_closed_form(t - x)[0, 0, 2])
            ref, _ = scipy.integrate.quad(f, 0.2, 1.7, points=[0.2 + 1.5 * i / 2 for i in range(3)] + [x],
                                          epsabs=1e-13, epsrel=1e-12)
            assert v == pytest.approx(ref, rel=1e-8, abs=1e-12)


class TestGrid:
    def test_knots(self):
        np.testing.assert_allclose(Grid(0.0, 0.25, 5).knots, [0, 0.25, 0.5, 0.75, 1.0])

    def test_spanning_includes_end(self):
        assert Grid.spanning(0.0, 1.0, 0.01).count == 101

    def test_duplicate_spec(self):
        with pytest.raises(ValueError, match="duplicate"):
            Grid.from_dict({"start": 0, "step": 0.1, "count": 3, "stop": 1.0})
        assert Grid.from_dict({"start": 0, "step": 0.1, "stop": 1.0}).count == 11

    @pytest.mark.parametrize("kwargs", [dict(start=0, step=0, count=3), dict(start=0, step=0.1, count=0),
                                        dict(start=np.nan, step=0.1, count=2)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            Grid(**kwargs)


class TestSimulate:
    def test_zero_truth(self, recovery_problem):
        p = recovery_problem
        y = simulate_data((VectorAtomicMeasure(2), np.zeros(4)), p["G"], p["basis"], p["nus"])
        np.testing.assert_array_equal(y, 0.0)

    def test_matches_assembly(self, recovery_problem):
        p = recovery_problem
        mats = p["mats"]
        a = np.zeros(mats.A.shape[1])
        for x, amp in zip(p["knots"], p["amps"]):
            k = int(round(x / p["grid"].step))
            a[k * 2:(k + 1) * 2] = amp
        np.testing.assert_allclose(mats.A @ a + mats.B @ p["q"], p["y"], atol=1e-10)

    def test_seeded_noise(self, recovery_problem):
        p = recovery_problem
        truth = (p["truth"], p["q"])
        y1 = simulate_data(truth, p["G"], p["basis"], p["nus"], noise_sigma=0.1, seed=3)
        y2 = simulate_data(truth, p["G"], p["basis"], p["nus"], noise_sigma=0.1, seed=3)
        y3 = simulate_data(truth, p["G"], p["basis"], p["nus"], noise_sigma=0.1, seed=4)
        assert y1.tobytes() == y2.tobytes()
        assert not np.array_equal(y1, y3)

    def test_wrong_q_length(self, recovery_problem):
        p = recovery_problem
        with pytest.raises(ValueError):
            simulate_data((p["truth"], np.zeros(3)), p["G"], p["basis"], p["nus"])

    def test_inadmissible(self):
        L = MatrixOperator.from_coeffs(TWO_BY_TWO)
        with pytest.raises(AdmissibilityError):
            simulate_data((VectorAtomicMeasure(2), None), greens_matrix(L), nullspace_basis(L),
                          [MeasurementFunctional.sampling([1, 0], 1.0)])

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(-2, 2)), min_size=1, max_size=4))
    def test_linearity(self, atoms):
        L = MatrixOperator.diagonal([OdoPoly.D(2)])
        G, basis = greens_matrix(L), nullspace_basis(L)
        nus = [MeasurementFunctional.sampling([1], t) for t in (0.3, 0.9, 1.4)]
        m = VectorAtomicMeasure(1, [(x, 0, a) for x, a in atoms])
        y1 = simulate_data((m, None), G, basis, nus)
        y2 = simulate_data((m.scale(-2.5), None), G, basis, nus)
        np.testing.assert_allclose(y2, -2.5 * y1, atol=1e-12)


def test_lspline_evaluate(double_ramp):
    G, basis = double_ramp
    f = LSpline(G, basis, VectorAtomicMeasure.from_vectors([0.5], [[1.0, -1.0]]), np.zeros(4))
    np.testing.assert_allclose(f.evaluate([0.0, 1.5]), [[0.0, 0.0], [1.0, -1.0]], atol=1e-15)
    with pytest.raises(ValueError):
        LSpline(G, basis, VectorAtomicMeasure(3), np.zeros(4)).components()
