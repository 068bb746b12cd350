"""Gaps, semigroup evolution, mixing times and the structural lemmas checked numerically."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import expm_multiply

from .coulomb import InteractionTable
from .guards import NumericalQualityError
from .hamiltonian import GibbsState, HamiltonianBlock, ModelParams, build_truncated_hamiltonian
from .lindblad import (
    FilterSpec,
    GeneratorMatrix,
    build_generator_symmetrized,
    build_jump_set,
    filtered_jump,
)
from .oscillator import enumerate_one_body_basis, one_body_ladder, product_basis

ZERO_RTOL = 1e-10


@dataclass
class SpectralSummary:
    eigenvalues: np.ndarray = field(repr=False)
    gap: float
    zero_threshold: float
    kernel_dim: int
    hermiticity_residual: float = 0.0
    max_eigenvalue: float = 0.0
    max_imag: float = 0.0


def spectral_summary(G: GeneratorMatrix) -> SpectralSummary:
    S = G.matrix
    if G.picture == "symmetrized":
        H = 0.5 * (S + S.conj().T)
        evals = linalg.eigvalsh(H, overwrite_a=True, check_finite=False)
        max_imag = 0.0
    else:
        evals = linalg.eigvals(S, check_finite=False)
        max_imag = float(np.abs(evals.imag).max())
        evals = evals[np.argsort(evals.real)]
    radius = float(np.abs(evals).max())
    thr = ZERO_RTOL * radius
    mag = np.abs(evals)
    kernel = mag <= thr
    rest = mag[~kernel]
    gap = float(rest.min()) if rest.size else 0.0
    return SpectralSummary(
        eigenvalues=evals,
        gap=gap,
        zero_threshold=thr,
        kernel_dim=int(kernel.sum()),
        hermiticity_residual=G.hermiticity_residual,
        max_eigenvalue=float(np.max(np.real(evals))),
        max_imag=max_imag,
    )


def evolve(G: GeneratorMatrix, rho0: np.ndarray, t: float) -> np.ndarray:
    """e^{tL} applied to rho0 (given and returned in the product basis)."""
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    rho0 = np.asarray(rho0, dtype=complex)
    if t == 0:
        return rho0.copy()
    x = G.to_basis_of(rho0).reshape(-1)
    y = expm_multiply(t * G.matrix, x)
    return G.from_basis(y.reshape(G.dim, G.dim))


def trajectory(G: GeneratorMatrix, rho0: np.ndarray, times) -> list[np.ndarray]:
    """States at increasing times, stepping from one time to the next."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-negative and increasing")
    x = G.to_basis_of(np.asarray(rho0, dtype=complex)).reshape(-1)
    out = []
    prev = 0.0
    for t in times:
        if t > prev:
            x = expm_multiply((t - prev) * G.matrix, x)
            prev = t
        out.append(G.from_basis(x.reshape(G.dim, G.dim)))
    return out


def trace_norm(X: np.ndarray) -> float:
    X = np.asarray(X)
    if np.allclose(X, X.conj().T, atol=1e-14 * max(1.0, np.abs(X).max())):
        return float(np.abs(np.linalg.eigvalsh(0.5 * (X + X.conj().T))).sum())
    return float(np.linalg.svd(X, compute_uv=False).sum())


def warmness_constant(rho_ini: np.ndarray, sigma: GibbsState) -> float:
    """Smallest c with rho <= c sigma, for the block-normalised Gibbs state sigma."""
    rho = np.asarray(rho_ini, dtype=complex)
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > 1e-12:
        raise ValueError(f"initial state must be a unit-trace state on the block (trace {tr})")
    p = sigma.block_populations
    V = sigma.eigenvectors
    r = V.conj().T @ rho @ V
    w = p**-0.5
    C = w[:, None] * r * w[None, :]
    return float(np.linalg.eigvalsh(0.5 * (C + C.conj().T)).max())


@dataclass
class MixingRecord:
    times: np.ndarray
    distances: np.ndarray
    warmness: float
    gap: float
    epsilon: float
    t_mix: float
    t_bound: float
    fitted_rate: float
    bound_curve: np.ndarray  # c e^{-gap t / 2}
    contraction_curve: np.ndarray  # sqrt(c) e^{-gap t / 2}
    monotone: bool
    contraction_violations: int

    @property
    def within_bound(self) -> bool:
        return self.t_mix <= self.t_bound * (1 + 1e-3)


def _fit_rate(times: np.ndarray, dist: np.ndarray, floor: float = 1e-9) -> float:
    mask = (dist > floor) & (dist < 0.1 * dist[0]) if dist[0] > 0 else dist > floor
    if mask.sum() < 3:
        mask = dist > floor
    idx = np.flatnonzero(mask)[-8:]
    if idx.size < 2:
        return math.nan
    slope = np.polyfit(times[idx], np.log(dist[idx]), 1)[0]
    return float(-slope)


def mixing_time_empirical(
    G: GeneratorMatrix,
    rho_ini: np.ndarray,
    sigma: GibbsState,
    epsilon: float,
    gap: float | None = None,
    n_times: int = 50,
) -> MixingRecord:
    """First time the trace distance to the sampler's Gibbs state drops below epsilon (bisected)."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if G.picture != "trace-class":
        raise ValueError("trajectories are run with the trace-class generator")
    target = sigma.block_state()
    if gap is None:
        gap = spectral_summary(G).gap
    if not gap > 0:
        raise NumericalQualityError("generator has no spectral gap")
    c = warmness_constant(rho_ini, sigma)
    t_bound = 2.0 * math.log(max(c, 1.0) / epsilon) / gap

    def dist(rho):
        return trace_norm(rho - target)

    times = np.geomspace(t_bound * 1e-3, 2.0 * t_bound, n_times)
    states = trajectory(G, rho_ini, times)
    d = np.array([dist(r) for r in states])
    d0 = dist(np.asarray(rho_ini, dtype=complex))

    if d0 <= epsilon:
        t_mix = 0.0
    else:
        # bracket: last grid time above epsilon and first below
        below = np.flatnonzero(d <= epsilon)
        if below.size == 0:
            hi, rho_hi = times[-1], states[-1]
            while dist(rho_hi) > epsilon:
                if hi > 10.0 * t_bound:
                    raise NumericalQualityError(
                        f"no mixing within 10x the bound {t_bound:.3g}; the gap may be misestimated"
                    )
                rho_hi = evolve(G, rho_hi, hi)
                hi *= 2.0
            lo, rho_lo = hi / 2.0, None
        else:
            k = int(below[0])
            hi = times[k]
            lo, rho_lo = (times[k - 1], states[k - 1]) if k > 0 else (0.0, np.asarray(rho_ini, dtype=complex))
        if rho_lo is None:
            rho_lo = evolve(G, rho_ini, lo)
        while hi - lo > 1e-3 * hi:
            mid = 0.5 * (lo + hi)
            rho_mid = evolve(G, rho_lo, mid - lo)
            if dist(rho_mid) <= epsilon:
                hi = mid
            else:
                lo, rho_lo = mid, rho_mid
        t_mix = hi

    full_d = np.concatenate([[d0], d])
    monotone = bool(np.all(np.diff(full_d) <= 1e-8))
    contraction = math.sqrt(c) * np.exp(-gap * times / 2.0)
    return MixingRecord(
        times=times,
        distances=d,
        warmness=c,
        gap=gap,
        epsilon=epsilon,
        t_mix=t_mix,
        t_bound=t_bound,
        fitted_rate=_fit_rate(times, d),
        bound_curve=c * np.exp(-gap * times / 2.0),
        contraction_curve=contraction,
        monotone=monotone,
        contraction_violations=int(np.sum(d > contraction + 1e-6)),
    )


def slowest_excited_rate(S: GeneratorMatrix, rho0: np.ndarray, sigma: GibbsState, rtol: float = 1e-8) -> float:
    """Smallest nonzero |eigenvalue| of a symmetrised generator whose mode is excited by rho0 - sigma.

    The deviation is mapped to the symmetrised picture with sigma^{-1/4} (.) sigma^{-1/4}.
    """
    qi = S.to_basis_of(sigma.block_power(-0.25))
    Y = qi @ S.to_basis_of(np.asarray(rho0, dtype=complex) - sigma.block_state()) @ qi
    evals, evecs = np.linalg.eigh(0.5 * (S.matrix + S.matrix.conj().T))
    weights = np.abs(evecs.conj().T @ Y.reshape(-1)) ** 2
    radius = np.abs(evals).max()
    mask = (np.abs(evals) > ZERO_RTOL * radius) & (weights > rtol * weights.sum())
    return float(np.abs(evals[mask]).min())


# ---------------------------------------------------------------------------
# finite-rank remainder


@dataclass
class RemainderReport:
    remainder: np.ndarray = field(repr=False)
    norm: float
    q_block_norm: float
    rank: int
    rank_bound: int
    singular_values: np.ndarray = field(repr=False)
    quadratic_rank: int
    quadratic_rank_bound: int
    quadratic_identity_residual: float

    @property
    def q_block_vanishes(self) -> bool:
        return self.q_block_norm <= 1e-10 * max(self.norm, 1e-300)


def _numerical_rank(X: np.ndarray, rtol: float = 1e-10) -> tuple[int, np.ndarray]:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > rtol * sv[0])), sv


def finite_rank_remainder(
    block0: HamiltonianBlock,
    block: HamiltonianBlock,
    A: np.ndarray,
    spec: FilterSpec,
    s: float,
    support: np.ndarray,
) -> RemainderReport:
    """R = L_s(H) - L_s(H0) for H = H0 + (perturbation supported on the boolean mask `support`)."""
    if block0.basis != block.basis:
        raise ValueError("both blocks must share the same product basis")
    support = np.asarray(support, dtype=bool)
    L0 = filtered_jump(block0, A, spec, s)
    L1 = filtered_jump(block, A, spec, s)
    R = L1 - L0
    q = ~support
    norm = float(np.linalg.norm(R, 2))
    q_norm = float(np.linalg.norm(R[np.ix_(q, q)], 2)) if q.any() else 0.0
    rank, sv = _numerical_rank(R)
    K = L1.conj().T @ L1 - L0.conj().T @ L0
    K_expanded = L0.conj().T @ R + R.conj().T @ L0 + R.conj().T @ R
    q_rank, _ = _numerical_rank(K)
    scale = max(float(np.abs(K).max()), 1e-300)
    return RemainderReport(
        remainder=R,
        norm=norm,
        q_block_norm=q_norm,
        rank=rank,
        rank_bound=2 * int(support.sum()),
        singular_values=sv,
        quadratic_rank=q_rank,
        quadratic_rank_bound=2 * rank,
        quadratic_identity_residual=float(np.abs(K - K_expanded).max()) / scale,
    )


def ambient_perturbation(n: int, d: int, M: int, M_pert: int, rng: np.random.Generator, scale: float = 0.5):
    """Free block on cutoff M plus a random Hermitian perturbation supported on cutoff M_pert states."""
    if not 1 <= M_pert < M:
        raise ValueError("need 1 <= M_pert < M")
    basis = product_basis(n, d, M)
    support = np.all(basis.states() < M_pert, axis=1)
    k = int(support.sum())
    X = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
    R = scale * (X + X.conj().T) / 2.0
    H = np.diag(basis.energies()).astype(complex)
    H[np.ix_(support, support)] += R
    block0 = HamiltonianBlock(basis, basis.energies(), np.zeros((basis.dim, basis.dim)), 1.0)
    return block0, HamiltonianBlock.from_matrix(basis, H), support


# ---------------------------------------------------------------------------
# locality commutator


@dataclass
class CommutatorReport:
    norm: float
    bound: float
    slack: float
    time_norms: dict


def locality_commutator_norm(table: InteractionTable, A: np.ndarray, times=(0.0, 0.3, 1.7), phase: float | None = None):
    """|| [X_M, A (x) 1] || for the compressed pair interaction X_M and a one-body operator A.

    `phase` is the Bohr frequency theta with A(t) = e^{i theta t} A (-2 for a, +2 for a^dag);
    A(t) is formed by explicit conjugation with the one-body oscillator energies and compared.
    """
    M = table.M
    X = table.as_matrix()
    A = np.asarray(A)
    if A.shape != (M, M):
        raise ValueError(f"one-body operator must be {M}x{M}")
    eye = np.eye(M)
    energies = enumerate_one_body_basis(table.d, M).energies

    def comm_norm(B):
        Bf = np.kron(B, eye)
        return float(np.linalg.norm(X @ Bf - Bf @ X, 2))

    base = comm_norm(A)
    time_norms = {}
    for t in times:
        U = np.diag(np.exp(1j * t * energies))
        At = U @ A @ U.conj().T
        if phase is not None:
            expected = np.exp(1j * phase * t) * A
            if np.abs(At - expected).max() > 1e-12 * max(1.0, np.abs(A).max()):
                raise NumericalQualityError("Heisenberg-evolved jump is not a phase multiple of the jump")
        time_norms[float(t)] = comm_norm(At)
    bound = 2.0 * float(np.linalg.norm(X, 2)) * float(np.linalg.norm(A, 2))
    return CommutatorReport(norm=base, bound=bound, slack=bound - base, time_norms=time_norms)


def ladder_leakage_norm(d: int, M: int, axis: int, kind: str) -> float:
    """|| A P_M || for the untruncated ladder A, using a one-body basis one level larger."""
    one = enumerate_one_body_basis(d, M)
    top = one.max_level + 1
    M_ext = sum(math.comb(level + d - 1, d - 1) for level in range(top + 1))
    big = one_body_ladder(enumerate_one_body_basis(d, M_ext), axis, kind)
    return float(np.linalg.norm(big[:, :M], 2))


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = (
    "n",
    "d",
    "M",
    "alpha_max",
    "beta",
    "sigma_E",
    "gap",
    "kernel_dim",
    "zero_threshold",
    "hermiticity_residual",
    "wall_time_s",
)


def gap_point(params: ModelParams, spec: FilterSpec, guard_override: bool = False, cache_dir=None) -> dict:
    start = time.perf_counter()
    block = build_truncated_hamiltonian(params, cache_dir)
    G = build_generator_symmetrized(
        block, build_jump_set(block.basis), spec, basis="energy", guard_override=guard_override
    )
    summary = spectral_summary(G)
    del G
    return {
        "n": params.n,
        "d": params.d,
        "M": params.M,
        "alpha_max": params.couplings.alpha_max,
        "beta": params.beta,
        "sigma_E": spec.sigma_E,
        "gap": summary.gap,
        "kernel_dim": summary.kernel_dim,
        "zero_threshold": summary.zero_threshold,
        "hermiticity_residual": summary.hermiticity_residual,
        "wall_time_s": time.perf_counter() - start,
    }


def _gap_point_args(args):
    return gap_point(*args)


def gap_sweep(plan, spec: FilterSpec, jobs: int = 1, guard_override: bool = False, cache_dir=None) -> list[dict]:
    """One row per ModelParams in plan order."""
    args = [(p, spec, guard_override, cache_dir) for p in plan]
    if jobs <= 1:
        return [_gap_point_args(a) for a in args]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_gap_point_args, args))


def uniform_gap_check(rows: list[dict], tolerance: float = 0.25) -> tuple[bool, float, float]:
    """(passes, min gap over n, gap at n=1) for a weak-coupling sweep."""
    ref = [r["gap"] for r in rows if r["n"] == 1]
    if not ref:
        raise ValueError("sweep needs an n=1 point")
    g1 = ref[0]
    gmin = min(r["gap"] for r in rows)
    return gmin >= (1.0 - tolerance) * g1, gmin, g1


__all__ = [
    "SpectralSummary",
    "MixingRecord",
    "RemainderReport",
    "CommutatorReport",
    "SWEEP_COLUMNS",
    "spectral_summary",
    "evolve",
    "trajectory",
    "trace_norm",
    "warmness_constant",
    "mixing_time_empirical",
    "slowest_excited_rate",
    "finite_rank_remainder",
    "ambient_perturbation",
    "locality_commutator_norm",
    "ladder_leakage_norm",
    "gap_point",
    "gap_sweep",
    "uniform_gap_check",
]

