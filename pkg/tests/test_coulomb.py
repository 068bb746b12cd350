import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from coulomb_gibbs.coulomb import (
    CacheVersionError,
    ChecksumError,
    CouplingMatrix,
    QuadratureSpec,
    assemble_interaction,
    cache_filename,
    cache_table,
    interaction_table,
    kernel,
    load_table,
    monte_carlo_diagonal,
    pair_interaction,
    read_header,
    two_body_matrix_elements,
)
from coulomb_gibbs.guards import NumericalQualityError
from coulomb_gibbs.oscillator import enumerate_one_body_basis, hermite_functions, product_basis

GAMMA = np.euler_gamma
GROUND = {3: math.sqrt(2 / math.pi), 2: (GAMMA - math.log(2)) / 2, 1: (GAMMA + math.log(2)) / 2}


def test_kernels():
    r = np.array([0.5, 1.0, 2.0])
    assert np.allclose(kernel(3, r), 1 / r)
    assert np.allclose(kernel(2, r), -np.log(r))
    assert np.allclose(kernel(1, r), -np.log(r))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_ground_pair_closed_form(d):
    t = interaction_table(d, 1)
    assert t.entries[0, 0, 0, 0] == pytest.approx(GROUND[d], abs=1e-12)


def _d1_oracle(a, b, c, e):
    """Independent route: centre-of-mass Gauss-Hermite inside an adaptive relative-coordinate integral."""
    s, w = special.roots_hermite(40)
    kmax = max(a, b, c, e)

    def g(u):
        x = s / math.sqrt(2) + u / 2
        y = s / math.sqrt(2) - u / 2
        hx = hermite_functions(kmax, x)
        hy = hermite_functions(kmax, y)
        vals = hx[a] * hx[c] * hy[b] * hy[e] * np.exp(s * s)
        return float(vals @ w) / math.sqrt(2)

    f = lambda u: -math.log(u) * (g(u) + g(-u))  # noqa: E731
    return integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, 25, limit=200)[0]


@pytest.mark.parametrize("idx", [(0, 0, 0, 0), (1, 0, 1, 0), (2, 1, 0, 1), (3, 2, 1, 0), (4, 4, 2, 2), (5, 0, 1, 2)])
def test_d1_entries_match_independent_quadrature(idx):
    t = interaction_table(1, 6)
    assert t.entries[idx] == pytest.approx(_d1_oracle(*idx), abs=1e-8)


@pytest.mark.parametrize("d,M", [(2, 4), (3, 4)])
def test_tensor_grid_route_agrees_with_radial_route(d, M):
    radial = two_body_matrix_elements(d, M)
    grid = two_body_matrix_elements(d, M, QuadratureSpec(tensor_nodes=60, singularity_mode="tensor-grid", target_tol=1e-3))
    assert np.abs(radial.entries - grid.entries).max() < 2e-3


def test_tensor_grid_refuses_unconverged_log_kernel_in_1d():
    with pytest.raises(NumericalQualityError):
        two_body_matrix_elements(1, 3, QuadratureSpec(tensor_nodes=20, singularity_mode="tensor-grid", target_tol=1e-4))


@pytest.mark.parametrize("d,M", [(1, 10), (2, 10), (3, 10)])
def test_table_symmetries(d, M):
    t = interaction_table(d, M)
    V = t.entries
    assert t.raw_asymmetry < 1e-10
    assert t.convergence_delta < QuadratureSpec().target_tol
    assert np.allclose(V, V.transpose(2, 3, 0, 1), atol=1e-14)  # Hermitian
    assert np.allclose(V, V.transpose(1, 0, 3, 2), atol=1e-14)  # particle exchange


@given(d=st.sampled_from([1, 2, 3]), data=st.data())
def test_parity_selection_rule(d, data):
    M = 8
    t = interaction_table(d, M)
    levels = enumerate_one_body_basis(d, M).modes
    idx = tuple(data.draw(st.integers(0, M - 1)) for _ in range(4))
    # the kernel is invariant under joint inversion, so odd total parity per axis vanishes
    if np.any(sum(levels[i] for i in idx) % 2):
        assert abs(t.entries[idx]) < 1e-12


@pytest.mark.parametrize("d", [1, 2, 3])
def test_tables_are_nested_in_the_cutoff(d):
    small, big = interaction_table(d, 4), interaction_table(d, 9)
    assert np.abs(small.entries - big.entries[:4, :4, :4, :4]).max() < 1e-12


def test_inverse_distance_compression_is_positive():
    X = interaction_table(3, 8).as_matrix()
    assert np.linalg.eigvalsh(X).min() > -1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_monte_carlo_agrees_on_random_diagonal_entries(d):
    rng = np.random.default_rng(1234 + d)
    M = 10
    t = interaction_table(d, M)
    modes = enumerate_one_body_basis(d, M).modes
    for _ in range(5):
        a, b = rng.integers(0, M, size=2)
        mean, se = monte_carlo_diagonal(d, modes[a], modes[b], 1_000_000, rng)
        assert abs(mean - t.entries[a, b, a, b]) <= 4 * se


def test_quadrature_spec_validation_and_fingerprint():
    with pytest.raises(ValueError):
        QuadratureSpec(radial_nodes=4)
    with pytest.raises(ValueError):
        QuadratureSpec(singularity_mode="magic")
    with pytest.raises(ValueError):
        QuadratureSpec(target_tol=0.5)
    assert QuadratureSpec().fingerprint() == QuadratureSpec().fingerprint()
    assert QuadratureSpec().fingerprint() != QuadratureSpec(radial_nodes=201).fingerprint()


def test_table_argument_validation():
    with pytest.raises(ValueError):
        two_body_matrix_elements(4, 3)
    with pytest.raises(ValueError):
        two_body_matrix_elements(2, 0)


def test_coupling_matrix_properties():
    c = CouplingMatrix(np.array([[9.0, 0.2, -0.4], [7.0, 9.0, 0.1], [7.0, 7.0, 9.0]]))
    assert np.allclose(c.alpha, c.alpha.T) and np.all(np.diag(c.alpha) == 0)
    assert c.alpha_max == pytest.approx(0.4)
    assert c.B_n == pytest.approx(0.7)
    assert c.A_n == pytest.approx(0.6)
    assert list(c.pairs()) == [(0, 1, 0.2), (0, 2, -0.4), (1, 2, 0.1)]
    assert CouplingMatrix.weak_coupling(3, 0.9).alpha_max == pytest.approx(0.1)
    assert np.allclose(c.scaled(2).alpha, 2 * c.alpha)
    with pytest.raises(ValueError):
        CouplingMatrix.from_pairs(3, {(1, 1): 0.3})
    assert CouplingMatrix.from_pairs(3, {(2, 0): 0.3}).alpha[0, 2] == 0.3


def test_two_particle_assembly_is_the_scaled_table():
    t = interaction_table(2, 4)
    basis = product_basis(2, 2, 4)
    W = assemble_interaction(basis, t, CouplingMatrix.uniform(2, 0.3))
    assert np.allclose(W, 0.3 * t.as_matrix())


def test_pair_interaction_acts_on_the_named_slots():
    t = interaction_table(1, 3)
    basis = product_basis(3, 1, 3)
    W02 = pair_interaction(basis, t, 0, 2)
    V = t.entries
    states = basis.states()
    for r, (a, b, c) in enumerate(states):
        for s, (a2, b2, c2) in enumerate(states):
            expect = V[a, c, a2, c2] if b == b2 else 0.0
            assert W02[r, s] == pytest.approx(expect, abs=1e-14)
    assert np.allclose(pair_interaction(basis, t, 2, 0), W02)
    with pytest.raises(ValueError):
        pair_interaction(basis, t, 1, 1)


def test_assembly_validates_shapes():
    t = interaction_table(2, 3)
    with pytest.raises(ValueError):
        assemble_interaction(product_basis(2, 2, 4), t, CouplingMatrix.uniform(2, 0.1))
    with pytest.raises(ValueError):
        assemble_interaction(product_basis(2, 2, 3), t, CouplingMatrix.uniform(3, 0.1))


def test_cache_round_trip_and_idempotence(tmp_path):
    quad = QuadratureSpec()
    t1 = interaction_table(2, 5, quad, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert [f.name for f in files] == [cache_filename(2, 5, quad)]
    t2 = interaction_table(2, 5, quad, cache_dir=tmp_path)
    assert len(list(tmp_path.iterdir())) == 1
    assert t1.checksum == t2.checksum
    loaded = load_table(files[0], d=2, M=5, quad_fingerprint=quad.fingerprint())
    assert np.array_equal(loaded.entries, t1.entries)
    assert read_header(files[0])["checksum"] == t1.checksum


def test_cache_evict_and_rebuild_gives_identical_checksum(tmp_path):
    t1 = interaction_table(3, 4, cache_dir=tmp_path)
    path = tmp_path / cache_filename(3, 4, QuadratureSpec())
    path.unlink()
    t2 = interaction_table(3, 4, cache_dir=tmp_path)
    assert path.exists() and t1.checksum == t2.checksum


def test_fingerprint_change_creates_new_entry(tmp_path):
    interaction_table(1, 3, QuadratureSpec(), cache_dir=tmp_path)
    interaction_table(1, 3, QuadratureSpec(radial_nodes=180), cache_dir=tmp_path)
    assert len(list(tmp_path.iterdir())) == 2


def test_corruption_and_metadata_mismatch_are_detected(tmp_path):
    t = two_body_matrix_elements(2, 3)
    path = cache_table(t, tmp_path / "t.bin")
    with pytest.raises(CacheVersionError):
        load_table(path, d=3)
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_table(path)
    (tmp_path / "junk.bin").write_bytes(b"nonsense")
    with pytest.raises(CacheVersionError):
        read_header(tmp_path / "junk.bin")
