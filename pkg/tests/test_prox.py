import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vsplines.norms import BASES, FAMILIES, NormSpec
from vsplines.prox import (
    prox,
    prox_inner,
    prox_outer,
    regularizer_dual,
    regularizer_value,
    soft_threshold,
    subgradient_check,
)

SPECS = [NormSpec(f, b) for f, b in itertools.product(FAMILIES, BASES)]
spec_ids = [f"{s.family}-{s.base}" for s in SPECS]

blocks = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=st.floats(-5, 5))
taus = st.floats(0.01, 5)


def objective(X, Z, tau, spec):
    return 0.5 * np.sum((X - Z) ** 2) + tau * regularizer_value(X, spec)


class TestExamples:
    def test_inner_l2_kills_group(self):
        np.testing.assert_allclose(prox_inner([[3.0, 4.0]], 5.0, "l2"), [[0.0, 0.0]])

    def test_inner_l2_shrinks(self):
        np.testing.assert_allclose(prox_inner([[3.0, 4.0]], 2.5, "l2"), [[1.5, 2.0]])

    def test_inner_l1(self):
        np.testing.assert_allclose(prox_inner([[2.0, -0.5]], 1.0, "l1"), [[1.0, 0.0]])

    def test_inner_linf(self):
        np.testing.assert_allclose(prox_inner([[3.0, 1.0]], 2.0, "linf"), [[1.0, 1.0]], atol=1e-12)

    def test_soft_threshold(self):
        np.testing.assert_array_equal(soft_threshold(np.array([-3.0, 0.5, 2.0]), 1.0), [-2.0, 0.0, 1.0])

    def test_zero_tau_is_identity(self):
        Z = np.random.default_rng(0).normal(size=(4, 3))
        for spec in SPECS:
            np.testing.assert_allclose(prox(Z, 0.0, spec), Z)

    @pytest.mark.parametrize("seed", range(10))
    def test_outer_l1_equals_inner_l1(self, seed):
        Z = np.random.default_rng(seed).normal(size=(6, 3))
        np.testing.assert_array_equal(prox_outer(Z, 0.7, "l1"), prox_inner(Z, 0.7, "l1"))

    @pytest.mark.parametrize("base", BASES)
    def test_single_knot_outer_equals_inner(self, base):
        Z = np.random.default_rng(1).normal(size=(1, 4))
        np.testing.assert_allclose(prox_outer(Z, 0.4, base), prox_inner(Z, 0.4, base), atol=1e-10)

    def test_outer_large_tau_vanishes(self):
        Z = np.random.default_rng(2).normal(size=(5, 3))
        for base in BASES:
            spec = NormSpec("outer", base)
            tau = 1.01 * regularizer_dual(Z, spec)
            np.testing.assert_allclose(prox(Z, tau, spec), 0.0, atol=1e-9)

    @pytest.mark.parametrize("base", ["l2", "linf"])
    def test_outer_zeros_are_exact(self, base):
        Z = np.array([[9.8, 6.5], [1e-3, -2e-3], [0.0, 3.3], [-1e-4, 0.0]])
        X = prox_outer(Z, 0.5, base)
        assert np.count_nonzero(X[1]) == 0 and np.count_nonzero(X[3]) == 0
        assert np.all(X[np.abs(X) > 0] * Z[np.abs(X) > 0] > 0)

    def test_weighted(self):
        spec = NormSpec("inner", "l1", (2.0, 1.0))
        np.testing.assert_allclose(prox(np.array([[3.0, 3.0]]), 1.0, spec), [[1.0, 2.0]])


class TestOptimality:
    @pytest.mark.parametrize("spec", SPECS, ids=spec_ids)
    def test_random_blocks(self, spec):
        rng = np.random.default_rng(42)
        for _ in range(20):
            Z = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 5)))) * 2
            tau = rng.uniform(0.05, 2.0)
            X = prox(Z, tau, spec)
            ok, excess, gap = subgradient_check(Z, X, tau, spec)
            assert ok, (excess, gap)
            f0 = objective(X, Z, tau, spec)
            for _ in range(50):
                P = X + rng.normal(size=X.shape) * 10.0 ** rng.uniform(-6, 0)
                assert f0 <= objective(P, Z, tau, spec) + 1e-12

    @pytest.mark.parametrize("spec", SPECS, ids=spec_ids)
    @settings(max_examples=40, deadline=None)
    @given(blocks, blocks, taus)
    def test_non_expansive(self, spec, Z1, Z2, tau):
        if Z1.shape != Z2.shape:
            Z2 = np.resize(Z2, Z1.shape)
        d = np.linalg.norm(prox(Z1, tau, spec) - prox(Z2, tau, spec))
        assert d <= np.linalg.norm(Z1 - Z2) * (1 + 1e-9) + 1e-9

    @pytest.mark.parametrize("spec", SPECS, ids=spec_ids)
    @settings(max_examples=40, deadline=None)
    @given(blocks, taus)
    def test_subgradient_property(self, spec, Z, tau):
        X = prox(Z, tau, spec)
        ok, excess, gap = subgradient_check(Z, X, tau, spec)
        assert ok, (excess, gap)

    def test_check_rejects_wrong_output(self):
        Z = np.array([[3.0, 4.0]])
        spec = NormSpec("inner", "l2")
        assert not subgradient_check(Z, Z * 0.9, 1.0, spec)[0]


class TestDualNorm:
    @pytest.mark.parametrize("spec", SPECS, ids=spec_ids)
    def test_holder_for_regularizer(self, spec):
        rng = np.random.default_rng(3)
        for _ in range(100):
            X, G = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
            assert abs(np.sum(X * G)) <= regularizer_value(X, spec) * regularizer_dual(G, spec) * (1 + 1e-12)

    def test_values(self):
        G = np.array([[1.0, -2.0], [0.5, 0.5]])
        assert regularizer_dual(G, NormSpec("inner", "l2")) == pytest.approx(np.sqrt(5))
        assert regularizer_dual(G, NormSpec("outer", "l2")) == pytest.approx(np.sqrt(5))
        assert regularizer_dual(G, NormSpec("outer", "linf")) == 3.0
        assert regularizer_dual(G, NormSpec("inner", "linf")) == 3.0
        assert regularizer_value(G, NormSpec("outer", "l2")) == pytest.approx(np.hypot(1.5, 2.5))
