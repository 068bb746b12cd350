import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from coulomb_gibbs.guards import DimensionGuardError, relaxed_guards
from coulomb_gibbs.oscillator import (
    BasisError,
    enumerate_one_body_basis,
    hermite_function,
    hermite_functions,
    hermite_polynomial_factors,
    ladder_matrix,
    lift_one_body,
    multi_indices,
    one_body_ladder,
    product_basis,
)

dims = st.sampled_from([1, 2, 3])


@given(d=dims, M=st.integers(1, 40))
def test_one_body_modes_sorted_distinct_and_complete_per_level(d, M):
    ob = enumerate_one_body_basis(d, M)
    levels = ob.modes.sum(axis=1)
    assert np.all(np.diff(levels) >= 0)
    assert len({tuple(k) for k in ob.modes}) == M
    # every level strictly below the top one is complete
    for level in range(int(levels.max())):
        assert np.sum(levels == level) == math.comb(level + d - 1, d - 1)
    assert np.allclose(ob.energies, 2 * levels + d)


def test_one_body_order_is_lexicographic_within_a_level():
    ob = enumerate_one_body_basis(3, 10)
    assert [tuple(k) for k in ob.modes[4:10]] == [(0, 0, 2), (0, 1, 1), (0, 2, 0), (1, 0, 1), (1, 1, 0), (2, 0, 0)]


def test_d1_modes_are_plain_levels():
    ob = enumerate_one_body_basis(1, 7)
    assert ob.modes.ravel().tolist() == list(range(7))
    assert ob.index_of((3,)) == 3 and ob.index_of((9,)) == -1


@pytest.mark.parametrize("d,M", [(0, 3), (4, 3), (2, 0)])
def test_invalid_basis_parameters(d, M):
    with pytest.raises(BasisError):
        enumerate_one_body_basis(d, M)


@given(n=st.integers(1, 3), d=dims, M=st.integers(1, 8), data=st.data())
def test_product_index_round_trip(n, d, M, data):
    basis = product_basis(n, d, M)
    states = basis.states()
    assert states.shape == (M**n, n)
    k = data.draw(st.integers(0, basis.dim - 1))
    assert basis.index_of(states[k]) == k


@given(n=st.integers(1, 3), d=dims, M=st.integers(1, 6), extra=st.integers(0, 4))
def test_embedding_preserves_states_and_energies(n, d, M, extra):
    small = product_basis(n, d, M)
    large = product_basis(n, d, M + extra)
    idx = small.embed_indices(large)
    assert np.array_equal(large.states()[idx], small.states())
    assert np.allclose(large.energies()[idx], small.energies())


def test_embedding_rejects_smaller_target():
    with pytest.raises(BasisError):
        product_basis(2, 1, 4).embed_indices(product_basis(2, 1, 3))


def test_product_energies_sum_one_body_energies():
    basis = product_basis(2, 2, 3)
    e1 = basis.one_body.energies
    expected = [e1[i] + e1[j] for i in range(3) for j in range(3)]
    assert np.allclose(basis.energies(), expected)


def test_dimension_guard_and_override():
    with pytest.raises(DimensionGuardError):
        product_basis(3, 1, 12)
    with relaxed_guards():
        assert product_basis(3, 1, 12).dim == 1728
    assert product_basis(3, 1, 12, max_dim=2000).dim == 1728


def test_particle_number_validation():
    with pytest.raises(BasisError):
        product_basis(0, 1, 3)
    with pytest.raises(BasisError):
        ladder_matrix(product_basis(2, 1, 3), 2, 0)


@given(d=dims, M=st.integers(2, 30), data=st.data())
def test_truncated_ladder_commutator_and_number(d, M, data):
    ob = enumerate_one_body_basis(d, M)
    axis = data.draw(st.integers(0, d - 1))
    a = one_body_ladder(ob, axis, "lower")
    ad = one_body_ladder(ob, axis, "raise")
    assert np.allclose(ad, a.T)
    # a^dag a counts quanta on the axis
    assert np.allclose(ad @ a, np.diag(ob.modes[:, axis]))
    # [a, a^dag] = 1 on modes whose raised partner is retained
    comm = a @ ad - ad @ a
    for col, k in enumerate(ob.modes):
        up = k.copy()
        up[axis] += 1
        expected = 1.0 if ob.index_of(up) >= 0 else -float(k[axis])
        assert comm[col, col] == pytest.approx(expected)


@given(n=st.integers(1, 3), d=dims, M=st.integers(1, 10))
def test_truncated_jump_norm_bound(n, d, M):
    basis = product_basis(n, d, M)
    top = int(basis.one_body.modes.max())
    for i in range(n):
        for j in range(d):
            for kind in ("lower", "raise"):
                assert np.linalg.norm(ladder_matrix(basis, i, j, kind), 2) <= math.sqrt(top + 1) + 1e-12


def test_lift_acts_on_one_slot():
    op = np.arange(9.0).reshape(3, 3)
    big = lift_one_body(op, 3, 1)
    assert np.allclose(big, np.kron(np.kron(np.eye(3), op), np.eye(3)))


def test_hermite_functions_match_scipy_hermite_polynomials():
    x = np.linspace(-4, 4, 17)
    vals = hermite_functions(12, x)
    for k in range(13):
        norm = 1.0 / math.sqrt(2.0**k * math.factorial(k) * math.sqrt(math.pi))
        ref = norm * special.eval_hermite(k, x) * np.exp(-x * x / 2)
        assert np.allclose(vals[k], ref, atol=1e-12)
    assert np.allclose(hermite_polynomial_factors(12, x) * np.exp(-x * x / 2), vals)


def test_hermite_functions_orthonormal_under_gauss_hermite():
    x, w = special.roots_hermite(60)
    h = hermite_functions(20, x) * np.exp(x * x / 2)
    gram = (h * w) @ h.T
    assert np.allclose(gram, np.eye(21), atol=1e-12)


def test_position_operator_acts_as_ladder_sum():
    # x h_k = (sqrt(k) h_{k-1} + sqrt(k+1) h_{k+1}) / sqrt 2
    x = np.linspace(-3, 3, 11)
    h = hermite_functions(10, x)
    for k in range(1, 10):
        rhs = (math.sqrt(k) * h[k - 1] + math.sqrt(k + 1) * h[k + 1]) / math.sqrt(2)
        assert np.allclose(x * h[k], rhs, atol=1e-12)


def test_product_hermite_function():
    pts = np.array([[0.3, -0.7], [1.1, 0.2]])
    expect = hermite_functions(2, pts[:, 0])[2] * hermite_functions(1, pts[:, 1])[1]
    assert np.allclose(hermite_function((2, 1), pts), expect)
    with pytest.raises(BasisError):
        hermite_function((1, 1, 1), pts)


def test_multi_indices_listing():
    basis = product_basis(2, 2, 3)
    listing = multi_indices(basis)
    assert listing[0] == ((0, 0), (0, 0))
    assert listing[5] == ((0, 1), (1, 0))
