import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coulomb_gibbs.coulomb import CouplingMatrix, QuadratureSpec, interaction_table
from coulomb_gibbs.guards import NumericalQualityError
from coulomb_gibbs.hamiltonian import ModelParams, build_truncated_hamiltonian, gibbs_state
from coulomb_gibbs.lindblad import FilterSpec, build_generator_symmetrized, build_generator_trace_class, build_jump_set
from coulomb_gibbs.oscillator import enumerate_one_body_basis, one_body_ladder
from coulomb_gibbs.spectral import (
    SWEEP_COLUMNS,
    ambient_perturbation,
    evolve,
    finite_rank_remainder,
    gap_sweep,
    ladder_leakage_norm,
    locality_commutator_norm,
    mixing_time_empirical,
    slowest_excited_rate,
    spectral_summary,
    trace_norm,
    trajectory,
    uniform_gap_check,
    warmness_constant,
)


@pytest.fixture(scope="module")
def system():
    block = build_truncated_hamiltonian(ModelParams(2, 1, 4, CouplingMatrix.uniform(2, 0.2), 1.0))
    spec = FilterSpec(1.0, 1.0)
    jumps = build_jump_set(block.basis)
    T = build_generator_trace_class(block, jumps, spec)
    S = build_generator_symmetrized(block, jumps, spec)
    return block, T, S, gibbs_state(block, 1.0)


def _random_state(dim, seed, rank=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(dim, rank or dim)) + 1j * rng.normal(size=(dim, rank or dim))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real


def test_gap_is_a_similarity_invariant(system):
    _, T, S, _ = system
    sT, sS = spectral_summary(T), spectral_summary(S)
    assert sS.kernel_dim == 1 and sT.kernel_dim == 1
    assert sT.gap == pytest.approx(sS.gap, rel=1e-8)
    assert sS.max_eigenvalue < 1e-10
    assert np.max(sT.eigenvalues.real) < 1e-10


def test_free_oscillator_gap_closed_form():
    block = build_truncated_hamiltonian(ModelParams(1, 1, 20, CouplingMatrix.uniform(1, 0.0), 1.0))
    S = build_generator_symmetrized(block, build_jump_set(block.basis), FilterSpec(1.0, sigma_w=1.0))
    assert spectral_summary(S).gap == pytest.approx(math.exp(-1.0) * math.sinh(1.0), rel=1e-9)


def test_trace_norm_matches_nuclear_norm():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    assert trace_norm(X) == pytest.approx(np.linalg.norm(X, "nuc"))
    H = X + X.conj().T
    assert trace_norm(H) == pytest.approx(np.linalg.norm(H, "nuc"))


@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), t1=st.floats(0.0, 2.0), t2=st.floats(0.0, 2.0))
def test_evolution_is_a_semigroup(system, seed, t1, t2):
    _, T, _, _ = system
    rho = _random_state(T.dim, seed)
    both = evolve(T, rho, t1 + t2)
    assert np.allclose(evolve(T, evolve(T, rho, t1), t2), both, atol=1e-11)


def test_evolution_derivative_is_the_generator(system):
    _, T, _, _ = system
    rho = _random_state(T.dim, 4)
    h = 1e-5
    deriv = (evolve(T, rho, h) - evolve(T, rho, 0.0)) / h
    gen = T.from_basis(T.apply(T.to_basis_of(rho)))
    assert np.abs(deriv - gen).max() < 1e-4 * np.abs(gen).max()


def test_trajectory_and_argument_checks(system):
    _, T, _, _ = system
    rho = _random_state(T.dim, 1)
    states = trajectory(T, rho, [0.0, 0.5, 1.0])
    assert np.allclose(states[0], rho)
    assert np.allclose(states[2], evolve(T, rho, 1.0))
    with pytest.raises(ValueError):
        evolve(T, rho, -1.0)
    with pytest.raises(ValueError):
        trajectory(T, rho, [1.0, 0.5])


def _warmness_by_bisection(rho, sigma_matrix):
    lo, hi = 0.0, 1e6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.eigvalsh(mid * sigma_matrix - rho).min() >= 0:
            hi = mid
        else:
            lo = mid
    return hi


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_warmness_matches_operator_inequality(system, seed):
    _, _, _, g = system
    rho = _random_state(g.block_state().shape[0], seed, rank=2)
    c = warmness_constant(rho, g)
    assert c == pytest.approx(_warmness_by_bisection(rho, g.block_state()), rel=1e-8)
    assert warmness_constant(g.block_state(), g) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        warmness_constant(2 * rho, g)


def test_mixing_record_respects_gap_bound(system):
    _, T, S, g = system
    gap = spectral_summary(S).gap
    rho = np.zeros((T.dim, T.dim), complex)
    rho[-1, -1] = 1.0
    rec = mixing_time_empirical(T, rho, g, 0.01, gap=gap)
    assert 0 < rec.t_mix <= rec.t_bound
    assert rec.within_bound and rec.monotone and rec.contraction_violations == 0
    after = evolve(T, rho, rec.t_mix)
    assert trace_norm(after - g.block_state()) <= 0.01 + 1e-9
    before = evolve(T, rho, 0.99 * rec.t_mix)
    assert trace_norm(before - g.block_state()) > 0.01
    assert rec.fitted_rate >= gap * (1 - 1e-2)
    with pytest.raises(ValueError):
        mixing_time_empirical(S, rho, g, 0.01)
    with pytest.raises(ValueError):
        mixing_time_empirical(T, rho, g, 1.5)


def test_slowest_excited_rate_recovers_planted_mode(system):
    _, T, S, g = system
    evals, evecs = np.linalg.eigh(0.5 * (S.matrix + S.matrix.conj().T))
    k = len(evals) - 5  # a slow mode, but not the slowest
    Y = S.from_basis(evecs[:, k].reshape(S.dim, S.dim))
    # the eigenspace is closed under adjoints; keep a Hermitian member
    Y = max(Y + Y.conj().T, 1j * (Y - Y.conj().T), key=lambda Z: np.abs(Z).max())
    q = g.block_power(0.25)
    rho = g.block_state() + 1e-3 * q @ Y @ q / np.abs(Y).max()
    assert slowest_excited_rate(S, rho, g) == pytest.approx(abs(evals[k]), rel=1e-6)
    assert slowest_excited_rate(S, _random_state(S.dim, 3), g) == pytest.approx(spectral_summary(S).gap, rel=1e-6)


def test_finite_rank_remainder_structure():
    block0, block, support = ambient_perturbation(2, 1, 6, 3, np.random.default_rng(2))
    spec = FilterSpec(1.0, 1.0)
    A = build_jump_set(block.basis)[0].matrix
    for s in (0.0, 0.25):
        rep = finite_rank_remainder(block0, block, A, spec, s, support)
        assert rep.rank <= rep.rank_bound
        assert rep.quadratic_rank <= rep.quadratic_rank_bound
        assert rep.quadratic_identity_residual < 1e-10
        assert rep.norm > 0
    with pytest.raises(ValueError):
        ambient_perturbation(1, 1, 4, 4, np.random.default_rng(0))


@pytest.mark.parametrize("M", [3, 6, 11])
def test_ladder_leakage_closed_forms_in_one_dimension(M):
    assert ladder_leakage_norm(1, M, 0, "lower") == pytest.approx(math.sqrt(M - 1))
    assert ladder_leakage_norm(1, M, 0, "raise") == pytest.approx(math.sqrt(M))


def test_locality_commutator_report():
    quad = QuadratureSpec()
    table = interaction_table(2, 6, quad)
    A = one_body_ladder(enumerate_one_body_basis(2, 6), 0, "lower")
    rep = locality_commutator_norm(table, A, phase=-2.0)
    assert rep.slack >= 0 and rep.norm > 0
    assert max(abs(v - rep.norm) for v in rep.time_norms.values()) < 1e-10
    with pytest.raises(NumericalQualityError):
        locality_commutator_norm(table, A, phase=2.0)
    with pytest.raises(ValueError):
        locality_commutator_norm(table, np.eye(3))


def test_gap_sweep_rows_and_parallel_agreement():
    plan = [ModelParams(n, 1, 3, CouplingMatrix.weak_coupling(n, 0.05), 1.0) for n in (1, 2)]
    spec = FilterSpec(1.0, 1.0)
    serial = gap_sweep(plan, spec)
    assert [set(r) for r in serial] == [set(SWEEP_COLUMNS)] * 2
    assert all(r["kernel_dim"] == 1 and r["gap"] > 0 for r in serial)
    parallel = gap_sweep(plan, spec, jobs=2)
    assert [r["gap"] for r in parallel] == [r["gap"] for r in serial]


def test_uniform_gap_check_logic():
    rows = [{"n": 1, "gap": 1.0}, {"n": 2, "gap": 0.8}, {"n": 3, "gap": 0.76}]
    assert uniform_gap_check(rows) == (True, 0.76, 1.0)
    assert uniform_gap_check(rows, tolerance=0.2)[0] is False
    with pytest.raises(ValueError):
        uniform_gap_check(rows[1:])


def test_ou_and_free_two_dimensional_gaps():
    from coulomb_gibbs.lindblad import ou_rates, ou_reference_generator

    nu_p, nu_m = ou_rates(1.0, 1.0)
    assert spectral_summary(ou_reference_generator(nu_p, nu_m, 40)).gap == pytest.approx((nu_m - nu_p) / 2, abs=1e-8)

    # d=2: the total-level cutoff couples the axes at the boundary, so the closed form is reached
    # geometrically in the number of retained levels (levels 0..6, 0..7, 0..8)
    errors = []
    for M in (28, 36, 45):
        block = build_truncated_hamiltonian(ModelParams(1, 2, M, CouplingMatrix.uniform(1, 0.0), 1.0))
        S = build_generator_symmetrized(block, build_jump_set(block.basis), FilterSpec(1.0, sigma_w=1.0),
                                        basis="energy")
        errors.append(spectral_summary(S).gap - math.exp(-1.0) * math.sinh(1.0))
    assert all(e > 0 for e in errors)
    assert errors[0] / errors[1] > 3 and errors[1] / errors[2] > 3
    assert errors[2] < 2e-5


def test_trajectory_preserves_trace_and_gibbs_state(system):
    _, T, _, g = system
    rho = _random_state(T.dim, 6)
    for r in trajectory(T, rho, np.geomspace(0.01, 20.0, 12)):
        assert abs(np.trace(r) - 1.0) < 1e-12
    sigma = g.block_state()
    assert np.abs(evolve(T, sigma, 5.0) - sigma).max() < 1e-9


def test_warmness_of_vacuum_and_ground_state(system):
    block, _, _, g = system
    vac = np.zeros((block.dim, block.dim), complex)
    vac[0, 0] = 1.0
    n, d, beta = 2, 1, 1.0
    W = float(np.linalg.norm(block.interaction, 2))
    top = float(block.basis.one_body.energies.max())
    assert warmness_constant(vac, g) <= math.exp(beta * (2 * W + n * top)) * (2 * math.sinh(beta)) ** (-d * n)
    psi = g.eigenvectors[:, 0]
    ground = np.outer(psi, psi.conj())
    Z_block = np.exp(-beta * block.eigenvalues).sum()
    assert warmness_constant(ground, g) == pytest.approx(Z_block * math.exp(beta * block.eigenvalues[0]), rel=1e-9)


def test_mixing_from_the_gibbs_state_is_immediate(system):
    _, T, S, g = system
    rec = mixing_time_empirical(T, g.block_state(), g, 0.01, gap=spectral_summary(S).gap)
    assert rec.t_mix == 0.0


def test_ou_vacuum_mixing_and_fitted_rate():
    block = build_truncated_hamiltonian(ModelParams(1, 1, 20, CouplingMatrix.uniform(1, 0.0), 1.0))
    jumps = build_jump_set(block.basis)
    spec = FilterSpec(1.0, sigma_w=1.0)
    S = build_generator_symmetrized(block, jumps, spec)
    T = build_generator_trace_class(block, jumps, spec)
    g = gibbs_state(block, 1.0)
    vac = np.zeros((20, 20), complex)
    vac[0, 0] = 1.0
    rec = mixing_time_empirical(T, vac, g, 0.01, gap=spectral_summary(S).gap)
    assert rec.within_bound and rec.monotone
    # a diagonal start only excites population modes, so compare with the slowest mode it excites
    assert rec.fitted_rate == pytest.approx(slowest_excited_rate(S, vac, g), rel=0.05)


def test_zero_perturbation_and_identity_commutator():
    block0, _, support = ambient_perturbation(2, 1, 6, 3, np.random.default_rng(0))
    A = build_jump_set(block0.basis)[0].matrix
    rep = finite_rank_remainder(block0, block0, A, FilterSpec(1.0, 1.0), 0.25, support)
    assert rep.norm == 0.0 and rep.rank == 0
    table = interaction_table(2, 6, QuadratureSpec())
    assert locality_commutator_norm(table, np.eye(6)).norm < 1e-12


def test_free_gap_is_independent_of_particle_number_and_continuous_in_coupling():
    spec = FilterSpec(1.0, 1.0)
    free = gap_sweep([ModelParams(n, 1, 4, CouplingMatrix.uniform(n, 0.0), 1.0) for n in (1, 2)], spec)
    assert free[0]["gap"] == pytest.approx(free[1]["gap"], rel=1e-10)
    alphas = [0.0, 1e-3, 2e-3, 4e-3]
    rows = gap_sweep([ModelParams(2, 1, 4, CouplingMatrix.uniform(2, a), 1.0) for a in alphas], spec)
    slopes = [abs(r["gap"] - rows[0]["gap"]) / a for r, a in zip(rows[1:], alphas[1:])]
    assert max(slopes) < 10.0  # Lipschitz constant K, reported by the sweep CLI as the gap column
