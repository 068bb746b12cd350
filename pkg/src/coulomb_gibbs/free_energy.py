"""Free-energy estimation: variational brackets, truncation sweeps and thermodynamic integration."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .coulomb import (
    CouplingMatrix,
    InteractionTable,
    QuadratureSpec,
    assemble_interaction,
    interaction_table,
    pair_interaction,
)
from .guards import HILBERT_DIM_GUARD, NumericalQualityError
from .hamiltonian import (
    HamiltonianBlock,
    ModelParams,
    free_energy_free,
    free_energy_upper_bound,
    free_tail_weight,
    gibbs_state,
)
from .oscillator import BasisError, product_basis

ORDER_TOL = 1e-10
MONOTONE_SLACK = 1e-12


# ---------------------------------------------------------------------------
# variational brackets and the thermodynamic inequality


def bogoliubov_bracket(blockH: HamiltonianBlock, blockHprime: HamiltonianBlock, beta: float):
    """(Tr sigma(H) D, F(H) - F(H'), Tr sigma(H') D) with D = H - H'.

    Both Hamiltonians are free outside the block, so D lives on the block and the traces
    are taken with the fully normalised Gibbs states.
    """
    if blockH.basis != blockHprime.basis:
        raise BasisError("bracket needs both Hamiltonians on the same basis")
    D = blockH.matrix - blockHprime.matrix
    gH = gibbs_state(blockH, beta)
    gP = gibbs_state(blockHprime, beta)
    lower = gH.expectation(D)
    upper = gP.expectation(D)
    diff = gH.free_energy - gP.free_energy
    scale = max(1.0, abs(lower), abs(upper))
    if not (lower <= diff + ORDER_TOL * scale and diff <= upper + ORDER_TOL * scale):
        raise NumericalQualityError(
            f"Bogoliubov ordering violated: {lower:.3e} <= {diff:.3e} <= {upper:.3e} fails"
        )
    return lower, diff, upper


@dataclass
class EnergyProfile:
    t: np.ndarray
    U: np.ndarray
    F_t: np.ndarray
    F_half: np.ndarray
    monotone: bool
    bound_slack: np.ndarray  # 2F_t - F_{t/2} - U, must be >= 0

    @property
    def violations(self) -> int:
        return int(np.sum(self.bound_slack < -ORDER_TOL * np.maximum(1.0, np.abs(self.U))))

    def rows(self) -> list[dict]:
        return [
            {"t": float(t), "U": float(u), "F_t": float(f), "F_half": float(h), "slack": float(s)}
            for t, u, f, h, s in zip(self.t, self.U, self.F_t, self.F_half, self.bound_slack)
        ]


def _spectrum_free_energy(E: np.ndarray, t: float) -> tuple[float, float]:
    """(F_t, U_t) for a finite spectrum E."""
    shift = float(E.min())
    w = np.exp(-t * (E - shift))
    Z = w.sum()
    return shift - math.log(Z) / t, float(E @ w / Z)


def internal_energy_profile(block, t_grid) -> EnergyProfile:
    """U_K(t) = Tr(sigma_t K) and the bound U_K(t) <= 2F_t(K) - F_{t/2}(K).

    ``block`` is a HamiltonianBlock or a Hermitian matrix; K is taken as the finite
    operator on that space, so the free tail is not part of K here.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be positive and strictly ascending")
    E = block.eigenvalues if isinstance(block, HamiltonianBlock) else np.linalg.eigvalsh(np.asarray(block))
    F_t, U, F_h = (np.empty_like(t) for _ in range(3))
    for k, tk in enumerate(t):
        F_t[k], U[k] = _spectrum_free_energy(E, tk)
        F_h[k], _ = _spectrum_free_energy(E, tk / 2.0)
    tol = ORDER_TOL * max(1.0, float(np.abs(U).max()))
    monotone = bool(np.all(np.diff(U) <= tol))
    return EnergyProfile(t, U, F_t, F_h, monotone, 2.0 * F_t - F_h - U)


# ---------------------------------------------------------------------------
# state distances


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Full trace norm ||rho - sigma||_1 (no factor 1/2)."""
    diff = np.asarray(rho) - np.asarray(sigma)
    return float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def relative_entropy(rho: np.ndarray, sigma: np.ndarray, support_tol: float = 1e-14) -> float:
    """D(rho || sigma) in nats; +inf when supp(rho) is not contained in supp(sigma)."""
    p, P = np.linalg.eigh(np.asarray(rho))
    q, Q = np.linalg.eigh(np.asarray(sigma))
    p = np.clip(p, 0.0, None)
    q = np.clip(q, 0.0, None)
    overlap = np.abs(P.conj().T @ Q) ** 2  # overlap[i, j] = |<p_i|q_j>|^2
    null = q <= support_tol * max(1.0, q.max())
    if np.any((p[:, None] * overlap)[:, null] > support_tol):
        return math.inf
    pos = p > 0
    entropy_term = float(np.sum(p[pos] * np.log(p[pos])))
    logq = np.where(null, 0.0, np.log(np.where(null, 1.0, q)))
    cross = float(p @ overlap @ logq)
    return max(entropy_term - cross, 0.0)


# ---------------------------------------------------------------------------
# truncation sweep


def sliced_table(table: InteractionTable, M: int) -> InteractionTable:
    """Restrict a table to the first M one-body modes (the ordering is nested in M)."""
    if M > table.M:
        raise ValueError(f"cannot slice a cutoff-{table.M} table to M={M}")
    e = table.entries[:M, :M, :M, :M]
    return InteractionTable(table.d, M, table.kind, np.ascontiguousarray(e), table.quad_fingerprint,
                            table.raw_asymmetry, table.convergence_delta)


def _block_for(n: int, d: int, M: int, couplings: CouplingMatrix, table: InteractionTable | None, s: float = 1.0):
    basis = product_basis(n, d, M)
    if table is None or n < 2 or not np.any(couplings.alpha):
        W = np.zeros((basis.dim, basis.dim))
    else:
        W = assemble_interaction(basis, sliced_table(table, M), couplings)
    return HamiltonianBlock(basis, basis.energies(), W, s)


@dataclass
class TruncationSweep:
    n: int
    d: int
    beta: float
    M_ref: int
    F_ref: float
    rows: list[dict]
    slope_free_energy: float
    slope_trace_distance: float
    reference_slopes: dict
    monotone: bool
    strictly_decreasing_F: bool
    strictly_decreasing_trace: bool
    pinsker_ok: bool
    upper_bound_ok: bool

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])


def _loglog_slope(M: np.ndarray, err: np.ndarray) -> float:
    keep = err > 0
    if keep.sum() < 2:
        return float("nan")
    return float(stats.linregress(np.log(M[keep]), np.log(err[keep])).slope)


def _strictly_decreasing(x: np.ndarray) -> bool:
    return bool(np.all(np.diff(x) < 0))


def truncation_sweep(
    n: int,
    d: int,
    beta: float,
    couplings: CouplingMatrix,
    M_list,
    M_ref: int,
    quad: QuadratureSpec | None = None,
    cache_dir=None,
) -> TruncationSweep:
    """Free-energy error, Gibbs-state trace distance and relative entropy against a reference cutoff.

    The reference block contains every smaller block, so sigma_M is compared on the reference
    block exactly and the remaining mass (beyond the reference block) is compared as a scalar:
    both states are diagonal and proportional to e^{-beta H0} there.
    """
    M_list = sorted(int(m) for m in M_list)
    if not M_list or M_ref <= M_list[-1]:
        raise ValueError("M_ref must exceed every cutoff in M_list")
    quad = quad or QuadratureSpec()
    interacting = n >= 2 and np.any(couplings.alpha)
    table = interaction_table(d, M_ref, quad, cache_dir=cache_dir) if interacting else None

    ref = _block_for(n, d, M_ref, couplings, table)
    g_ref = gibbs_state(ref, beta)
    sigma_ref = g_ref.density_matrix
    ref_basis = ref.basis
    beyond_ref = free_tail_weight(ref_basis, beta)  # unshifted: sum of e^{-beta E0} beyond the reference block
    h0_ref = ref_basis.energies()
    upper_bound = free_energy_upper_bound(n, d, beta, couplings)

    rows = []
    for M in M_list + [M_ref]:
        blk = ref if M == M_ref else _block_for(n, d, M, couplings, table)
        g = gibbs_state(blk, beta)
        idx = blk.basis.embed_indices(ref_basis)
        outside = np.setdiff1d(np.arange(ref_basis.dim), idx)

        sigma_ext = np.zeros_like(sigma_ref)
        sigma_ext[np.ix_(idx, idx)] = g.density_matrix
        sigma_ext[outside, outside] = np.exp(-beta * h0_ref[outside] - g.log_Z)
        tail_M = beyond_ref * math.exp(-g.log_Z)
        tdist = trace_distance(sigma_ref, sigma_ext) + abs(g_ref.tail_weight - tail_M)

        # D(sigma_ref || sigma_M) = beta Tr(sigma_ref (H_M - H_ref)) + log Z_M - log Z_ref
        W_ext = np.zeros_like(sigma_ref)
        W_ext[np.ix_(idx, idx)] = blk.interaction * blk.s
        dH = W_ext - ref.interaction * ref.s
        rel = beta * float(np.sum(sigma_ref * dH.T)) + g.log_Z - g_ref.log_Z
        rel = max(rel, 0.0)

        rows.append({
            "M": M,
            "dim": blk.dim,
            "F_M": g.free_energy,
            "free_energy_error": abs(g.free_energy - g_ref.free_energy),
            "trace_distance": tdist,
            "relative_entropy": rel,
            "pinsker_rhs": math.sqrt(2.0 * rel),
            "upper_bound": upper_bound,
            "tail_weight": g.tail_weight,
        })

    swept = rows[:-1]
    Ms = np.array([r["M"] for r in swept], dtype=float)
    F_err = np.array([r["free_energy_error"] for r in swept])
    T_err = np.array([r["trace_distance"] for r in swept])
    slack = ORDER_TOL * max(1.0, abs(g_ref.free_energy))
    return TruncationSweep(
        n=n, d=d, beta=beta, M_ref=M_ref, F_ref=g_ref.free_energy, rows=rows,
        slope_free_energy=_loglog_slope(Ms, F_err),
        slope_trace_distance=_loglog_slope(Ms, T_err),
        reference_slopes={"free_energy": -1.0 / (4 * d), "trace_distance": -1.0 / (8 * d)},
        monotone=bool(np.all(np.diff(F_err) <= slack)),
        strictly_decreasing_F=_strictly_decreasing(F_err),
        strictly_decreasing_trace=_strictly_decreasing(T_err),
        pinsker_ok=all(r["trace_distance"] <= r["pinsker_rhs"] + 1e-12 for r in rows),
        upper_bound_ok=all(r["F_M"] <= r["upper_bound"] + 1e-12 for r in rows),
    )


# ---------------------------------------------------------------------------
# thermodynamic integration


@dataclass(frozen=True)
class IntegrationPlan:
    L: int
    S: int | None = None
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if int(self.L) < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.S is not None and int(self.S) < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def s_nodes(self) -> np.ndarray:
        return np.arange(self.L) / self.L


@dataclass
class FreeEnergyReport:
    F_hat: float
    F0_analytic: float
    Delta_F_hat: float
    budget: dict
    node_s: np.ndarray
    node_values: np.ndarray
    monotone: bool
    mode: str
    node_widths: np.ndarray | None = None
    details: dict = field(default_factory=dict)
    annotations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "F_hat": self.F_hat,
            "F0_analytic": self.F0_analytic,
            "Delta_F_hat": self.Delta_F_hat,
            "budget": dict(self.budget),
            "monotone": self.monotone,
            "L": int(self.node_s.size),
            "details": _jsonable(self.details),
            "annotations": list(self.annotations),
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def node_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "s", "integrand", "width"])
        widths = self.node_widths if self.node_widths is not None else np.zeros_like(self.node_values)
        for k, (s, f, wd) in enumerate(zip(self.node_s, self.node_values, widths)):
            w.writerow([k, repr(float(s)), repr(float(f)), repr(float(wd))])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


class ThermoPath:
    """The path H(s) = H0 + s W on a fixed block, with cached exact integrand values."""

    def __init__(self, params: ModelParams, cache_dir=None, table: InteractionTable | None = None,
                 state_source: str = "exact", sampler_epsilon: float = 1e-3, sigma_E: float = 1.0):
        if state_source not in ("exact", "sampler"):
            raise ValueError(f"state_source must be 'exact' or 'sampler', got {state_source!r}")
        if not 0 < sampler_epsilon < 1:
            raise ValueError("sampler_epsilon must lie in (0, 1)")
        self.params = params
        self.state_source = state_source
        self.sampler_epsilon = float(sampler_epsilon)
        self.sigma_E = sigma_E
        self.sampler_log: dict[float, dict] = {}
        self._sampled: dict[float, np.ndarray] = {}
        interacting = params.n >= 2 and np.any(params.couplings.alpha)
        if interacting and table is None:
            table = interaction_table(params.d, params.M, params.quad, cache_dir=cache_dir)
        self.table = sliced_table(table, params.M) if table is not None else None
        self.block = _block_for(params.n, params.d, params.M, params.couplings, self.table)
        self.W = self.block.interaction
        self._cache: dict[float, tuple] = {}

    @property
    def interacting(self) -> bool:
        return self.table is not None

    def state(self, s: float):
        key = float(s)
        if key not in self._cache:
            g = gibbs_state(self.block.with_scale(key), self.params.beta)
            self._cache[key] = (g, g.expectation(self.W))
        return self._cache[key]

    def integrand(self, s: float) -> float:
        return self.state(s)[1]

    def exact_delta(self) -> float:
        return self.state(1.0)[0].free_energy - self.F0

    @property
    def F0(self) -> float:
        p = self.params
        return free_energy_free(p.n, p.d, p.beta)

    def sampler_state(self, s: float) -> np.ndarray:
        """Vacuum evolved under the node's trace-class generator for the guaranteed mixing time.

        The time 2 log(c / eps) / gap bounds the trace distance to the block Gibbs state by eps.
        """
        from .lindblad import FilterSpec, build_generator_symmetrized, build_generator_trace_class, build_jump_set
        from .spectral import evolve, spectral_summary, trace_norm, warmness_constant

        key = float(s)
        if key in self._sampled:
            return self._sampled[key]
        block = self.block.with_scale(key)
        beta = self.params.beta
        spec = FilterSpec(beta, self.sigma_E)
        jumps = build_jump_set(block.basis)
        gap = spectral_summary(build_generator_symmetrized(block, jumps, spec)).gap
        if not gap > 0:
            raise NumericalQualityError(f"sampler generator at s={key} has no spectral gap")
        g = self.state(key)[0]
        rho0 = np.zeros((block.dim, block.dim), dtype=complex)
        rho0[0, 0] = 1.0  # product state 0 is the vacuum
        c = warmness_constant(rho0, g)
        t = 2.0 * math.log(max(c, 1.0) / self.sampler_epsilon) / gap
        rho = evolve(build_generator_trace_class(block, jumps, spec), rho0, t)
        rho = 0.5 * (rho + rho.conj().T)
        self._sampled[key] = rho
        self.sampler_log[key] = {
            "gap": gap,
            "warmness": c,
            "time": t,
            "trace_distance": trace_norm(rho - g.block_state()),
        }
        return rho

    def pair_distributions(self, s: float):
        """Spectral measure of each unit pair observable Pi_M W_ij Pi_M in the node state.

        Returns [(i, j, alpha, values, probs)].  With exact states the complement of the
        block carries the observable's eigenvalue 0 with the tail weight; a sampler state
        lives on the block, so that outcome gets probability 0.
        """
        rho = self.sampler_state(s) if self.state_source == "sampler" else None
        g, _ = self.state(s)
        out = []
        for i, j, a, vals, vecs in self._pair_spectra():
            if rho is None:
                amp = g.eigenvectors.conj().T @ vecs
                probs = g.populations @ (np.abs(amp) ** 2)
                tail = g.tail_weight
            else:
                probs = np.einsum("ak,ab,bk->k", vecs.conj(), rho, vecs).real
                tail = 0.0
            values = np.append(vals, 0.0)
            probs = np.append(probs, tail)
            probs = np.clip(probs, 0.0, None)
            out.append((i, j, a, values, probs / probs.sum()))
        return out

    def _pair_spectra(self):
        if not hasattr(self, "_spectra"):
            spectra = []
            if self.interacting:
                for i, j, a in self.params.couplings.pairs():
                    if a == 0.0:
                        continue
                    O = pair_interaction(self.block.basis, self.table, i, j)
                    vals, vecs = np.linalg.eigh(0.5 * (O + O.T))
                    spectra.append((i, j, a, vals, vecs))
            self._spectra = spectra
        return self._spectra

    def hoeffding_ranges(self) -> list[float]:
        """|alpha_ij| times the spectral diameter of each pair observable (0 included)."""
        return [abs(a) * (max(v.max(), 0.0) - min(v.min(), 0.0)) for _, _, a, v, _ in self._pair_spectra()]


def _check_monotone(values: np.ndarray, slack: np.ndarray | float) -> bool:
    return bool(np.all(np.diff(values) <= slack))


def thermo_integrate_exact(params: ModelParams, plan: IntegrationPlan, path: ThermoPath | None = None,
                           cache_dir=None) -> FreeEnergyReport:
    """Left-endpoint Riemann sum of f(s) = Tr(sigma(H(s)) W) with exact traces."""
    path = path or ThermoPath(params, cache_dir)
    s_nodes = plan.s_nodes
    f = np.array([path.integrand(s) for s in s_nodes])
    f_end = path.integrand(1.0)
    scale = max(1.0, float(np.abs(f).max()) if f.size else 1.0)
    monotone = _check_monotone(np.append(f, f_end), MONOTONE_SLACK * scale)
    if not monotone:
        raise NumericalQualityError("thermodynamic-integration integrand increases along the path")
    delta_hat = float(f.mean())
    exact = path.exact_delta()
    riemann_bound = (f[0] - f_end) / plan.L if f.size else 0.0
    return FreeEnergyReport(
        F_hat=path.F0 + delta_hat,
        F0_analytic=path.F0,
        Delta_F_hat=delta_hat,
        budget={"truncation": 0.0, "riemann": float(riemann_bound), "statistical": 0.0},
        node_s=s_nodes,
        node_values=f,
        monotone=monotone,
        mode="exact",
        details={"exact_Delta_F": exact, "riemann_error": delta_hat - exact, "f_at_1": f_end},
    )


def riemann_refinement(params: ModelParams, L_values, path: ThermoPath | None = None, cache_dir=None) -> dict:
    """Riemann errors over a doubling sequence of L, reusing nodes of the finest grid."""
    L_values = sorted(int(L) for L in L_values)
    path = path or ThermoPath(params, cache_dir)
    exact = path.exact_delta()
    errors = []
    for L in L_values:
        rep = thermo_integrate_exact(params, IntegrationPlan(L), path=path)
        errors.append(rep.Delta_F_hat - exact)
    errors = np.array(errors)
    ratios = errors[:-1] / errors[1:] if np.all(errors != 0) else np.full(len(L_values) - 1, np.nan)
    return {"L": L_values, "errors": errors, "ratios": ratios, "exact_Delta_F": exact}


def _hoeffding_sigma2(path: ThermoPath, L: int, S: int) -> float:
    """Sum of squared per-shot ranges of the aggregate estimator."""
    R2 = float(np.sum(np.square(path.hoeffding_ranges())))
    return R2 / (L * S)


def hoeffding_half_width(sigma2: float, delta: float) -> float:
    return math.sqrt(0.5 * sigma2 * math.log(2.0 / delta))


def thermo_integrate_sampled(params: ModelParams, plan: IntegrationPlan, path: ThermoPath | None = None,
                             cache_dir=None) -> FreeEnergyReport:
    """Shot-noise emulation: S measurement outcomes per node and pair from the exact Gibbs state.

    The sample mean of S iid draws is produced through its multinomial outcome counts, one
    Philox stream per (seed, node, pair).
    """
    if plan.S is None:
        raise ValueError("sampled integration needs a shot count S")
    path = path or ThermoPath(params, cache_dir)
    S = int(plan.S)
    s_nodes = plan.s_nodes
    f_hat = np.zeros(s_nodes.size)
    for k, s in enumerate(s_nodes):
        for i, j, a, values, probs in path.pair_distributions(s):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([plan.seed, k, i, j])))
            counts = rng.multinomial(S, probs)
            f_hat[k] += a * float(counts @ values) / S

    ranges2 = float(np.sum(np.square(path.hoeffding_ranges())))
    sigma2 = _hoeffding_sigma2(path, plan.L, S)
    half = hoeffding_half_width(sigma2, plan.delta)
    node_sd = math.sqrt(ranges2 / S) / 2.0
    widths = np.full(s_nodes.size, node_sd)
    monotone = _check_monotone(f_hat, 4.0 * 2.0 * node_sd + MONOTONE_SLACK)
    delta_hat = float(f_hat.mean()) if f_hat.size else 0.0
    riemann_sum = float(np.mean([path.integrand(s) for s in s_nodes]))
    f_end = path.integrand(1.0)
    return FreeEnergyReport(
        F_hat=path.F0 + delta_hat,
        F0_analytic=path.F0,
        Delta_F_hat=delta_hat,
        budget={
            "truncation": 0.0,
            "riemann": float((path.integrand(0.0) - f_end) / plan.L),
            "statistical": half,
        },
        node_s=s_nodes,
        node_values=f_hat,
        monotone=monotone,
        mode="sampled",
        node_widths=widths,
        details={
            "S": S,
            "seed": plan.seed,
            "delta": plan.delta,
            "hoeffding_sd": math.sqrt(sigma2) / 2.0,
            "state_source": path.state_source,
            "sampler_max_trace_distance": max(
                (v["trace_distance"] for v in path.sampler_log.values()), default=0.0),
            "hoeffding_half_width": half,
            "exact_riemann_sum": riemann_sum,
            "exact_Delta_F": path.exact_delta(),
        },
    )


# ---------------------------------------------------------------------------
# end-to-end estimator


def theoretical_cutoff_log10(n: int, d: int, alpha_max: float, epsilon: float) -> float:
    """log10 of ((n^3 a + n^5 a^3)/eps)^(4d), the asymptotic cutoff with unit constant."""
    base = (n**3 * alpha_max + n**5 * alpha_max**3) / epsilon
    return 4 * d * math.log10(base) if base > 0 else -math.inf


def estimate_free_energy(
    n: int,
    d: int,
    beta: float,
    couplings: CouplingMatrix,
    epsilon: float,
    delta: float,
    seed: int = 0,
    M_ref: int = 12,
    M_candidates=None,
    quad: QuadratureSpec | None = None,
    max_dim: int = HILBERT_DIM_GUARD,
    cache_dir=None,
) -> FreeEnergyReport:
    """Estimate F_beta(H_n) to accuracy epsilon with failure probability delta.

    The budget is split evenly over truncation, Riemann and sampling error. The cutoff comes
    from the measured truncation curve against M_ref; the asymptotic cutoff is recorded too.
    """
    if not (0.0 < epsilon < 1.0 and 0.0 < delta < 1.0):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    quad = quad or QuadratureSpec()
    third = epsilon / 3.0
    F0 = free_energy_free(n, d, beta)
    annotations: list[str] = []
    details: dict = {"epsilon": epsilon, "delta": delta, "seed": seed, "split": "epsilon/3 per source"}

    if n < 2 or not np.any(couplings.alpha):
        details.update({"M": 1, "L": 0, "S": 0, "log10_M_theory": None})
        return FreeEnergyReport(F0, F0, 0.0, {"truncation": 0.0, "riemann": 0.0, "statistical": 0.0},
                                np.zeros(0), np.zeros(0), True, "analytic", details=details,
                                annotations=["non-interacting: closed form"])

    max_M = int(math.floor(max_dim ** (1.0 / n) + 1e-9))
    if M_ref > max_M:
        annotations.append(f"reference cutoff reduced from {M_ref} to {max_M} by the dimension guard")
        M_ref = max_M
    candidates = sorted(int(m) for m in (M_candidates or range(1, M_ref)) if int(m) < M_ref)
    if not candidates:
        raise ValueError("no candidate cutoff below the reference cutoff")
    sweep = truncation_sweep(n, d, beta, couplings, candidates, M_ref, quad, cache_dir)
    errs = {r["M"]: r["free_energy_error"] for r in sweep.rows[:-1]}
    feasible = [M for M in candidates if errs[M] <= third]
    if feasible:
        M = feasible[0]
    else:
        M = candidates[-1]
        annotations.append(
            f"budget-infeasible at desk scale: best measured truncation error {errs[M]:.3e} > epsilon/3"
        )
    achievable = 3.0 * errs[M] if not feasible else epsilon
    details.update({
        "M": M,
        "M_ref": M_ref,
        "truncation_curve": {str(k): v for k, v in errs.items()},
        "log10_M_theory": theoretical_cutoff_log10(n, d, couplings.alpha_max, epsilon),
        "achievable_epsilon": achievable,
    })

    table = interaction_table(d, M_ref, quad, cache_dir=cache_dir)
    params = ModelParams(n, d, M, couplings, beta, quad)
    path = ThermoPath(params, table=table)
    # when truncation alone exceeds epsilon/3, size the other two sources to the achievable target
    part = achievable / 3.0
    spread = path.integrand(0.0) - path.integrand(1.0)
    L = max(1, math.ceil(spread / part))
    R2 = float(np.sum(np.square(path.hoeffding_ranges())))
    S = max(1, math.ceil(R2 * math.log(2.0 / delta) / (2.0 * L * part**2)))
    details.update({"L": L, "S": S})

    rep = thermo_integrate_sampled(params, IntegrationPlan(L, S, delta, seed), path=path)
    rep.budget["truncation"] = errs[M]
    rep.details.update(details)
    rep.annotations.extend(annotations)
    rep.mode = "estimate"
    rep.details["total_budget"] = sum(rep.budget.values())
    return rep


__all__ = [
    "bogoliubov_bracket",
    "EnergyProfile",
    "internal_energy_profile",
    "trace_distance",
    "relative_entropy",
    "sliced_table",
    "TruncationSweep",
    "truncation_sweep",
    "IntegrationPlan",
    "FreeEnergyReport",
    "ThermoPath",
    "thermo_integrate_exact",
    "riemann_refinement",
    "thermo_integrate_sampled",
    "hoeffding_half_width",
    "theoretical_cutoff_log10",
    "estimate_free_energy",
]
