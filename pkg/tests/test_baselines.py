import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsn_estimation.baselines import (BaselineKind, average_weights, baseline_matrices, half_half_weights,
                                      laplacian_weights, old_estimates_plus_own)
from wsn_estimation.channel import LossRealization


def realization(rows):
    return LossRealization(np.array(rows, bool))


class TestE1:
    def test_edgeless(self):
        k, h = laplacian_weights(realization(np.eye(3)))
        np.testing.assert_array_equal(k, np.eye(3) / 2)
        np.testing.assert_array_equal(k, h)

    def test_pair(self):
        k, h = laplacian_weights(realization(np.ones((2, 2))))
        np.testing.assert_array_equal(k, [[0, 0.5], [0.5, 0]])
        np.testing.assert_array_equal(h, k)

    def test_directed_rows(self):
        k, _ = laplacian_weights(realization([[1, 1, 1], [0, 1, 0], [0, 0, 1]]))
        np.testing.assert_array_equal(k[0], [-0.5, 0.5, 0.5])
        np.testing.assert_array_equal(k[1], [0, 0.5, 0])


class TestE2:
    def test_isolated(self):
        k, h = average_weights(realization(np.eye(3)), 1)
        assert h[1] == 1 and not k.any()

    def test_four(self):
        _, h = average_weights(realization(np.ones((4, 4))), 0)
        np.testing.assert_array_equal(h, 0.25)

    def test_star_variance_matches_enumeration(self):
        # center hears 3 leaves each with probability 0.7
        rng = np.random.default_rng(0)
        s2 = 1.5
        errs = []
        for _ in range(40_000):
            row = np.r_[True, rng.random(3) < 0.7]
            phi = np.eye(4, dtype=bool)
            phi[0] = row
            _, h = average_weights(realization(phi), 0)
            errs.append(h @ rng.normal(0, np.sqrt(s2), 4))
        expected = s2 * sum(
            __import__("math").comb(3, r) * 0.7 ** r * 0.3 ** (3 - r) / (1 + r) for r in range(4))
        assert abs(np.var(errs) - expected) < 3 * expected * np.sqrt(2 / len(errs))


class TestE3:
    def test_isolated(self):
        k, h = old_estimates_plus_own(realization(np.eye(2)), 0)
        assert (k[0], h[0]) == (0.5, 0.5)

    def test_pair(self):
        k, h = old_estimates_plus_own(realization(np.ones((2, 2))), 0)
        np.testing.assert_array_equal(k, [0.25, 0.5])
        assert h[0] == 0.25 and h[1] == 0
        assert k.sum() + h.sum() == 1


class TestE4:
    def test_isolated(self):
        k, h = half_half_weights(realization(np.eye(2)), 1)
        assert (k[1], h[1]) == (0.5, 0.5)

    def test_five(self):
        k, h = half_half_weights(realization(np.ones((5, 5))), 2)
        np.testing.assert_allclose(k, 0.1)
        np.testing.assert_allclose(h, 0.1)


def test_kind_parsing():
    assert BaselineKind("E3") is BaselineKind.E3
    with pytest.raises(ValueError):
        BaselineKind("E5")


@st.composite
def realizations(draw):
    n = draw(st.integers(1, 8))
    bits = draw(st.lists(st.booleans(), min_size=n * n, max_size=n * n))
    phi = np.array(bits, bool).reshape(n, n)
    np.fill_diagonal(phi, True)
    return phi


class TestProperties:
    @given(realizations(), st.sampled_from(["E2", "E3", "E4"]))
    @settings(max_examples=150, deadline=None)
    def test_row_stochastic_on_support(self, phi, kind):
        k, h = baseline_matrices(kind, phi)
        np.testing.assert_allclose((k + h).sum(axis=1), 1.0, atol=1e-12)
        assert not k[~phi].any() and not h[~phi].any()

    @given(realizations(), st.sampled_from(["E2", "E3", "E4"]))
    @settings(max_examples=100, deadline=None)
    def test_matrices_match_rows(self, phi, kind):
        fn = {"E2": average_weights, "E3": old_estimates_plus_own, "E4": half_half_weights}[kind]
        k, h = baseline_matrices(kind, phi)
        for i in range(phi.shape[0]):
            ki, hi = fn(realization(phi), i)
            np.testing.assert_allclose(k[i], ki)
            np.testing.assert_allclose(h[i], hi)

    @given(realizations())
    @settings(max_examples=100, deadline=None)
    def test_e1_symmetric_weights(self, phi):
        k, h = baseline_matrices("E1", phi)
        np.testing.assert_array_equal(k, h)
        full = np.ones_like(phi)
        np.testing.assert_allclose(sum(baseline_matrices("E1", full)).sum(axis=1), 1.0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_e2_unbiased_on_constant(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        errs = []
        for _ in range(2000):
            phi = (rng.random((n, n)) < 0.7) | np.eye(n, dtype=bool)
            _, h = baseline_matrices("E2", phi)
            errs.append(h @ (3.0 + rng.normal(size=n)) - 3.0)
        assert abs(np.mean(errs)) < 4 * np.std(errs) / np.sqrt(len(errs)) + 1e-12
