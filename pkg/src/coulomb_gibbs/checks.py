"""The invariant suite behind `verify`: each check yields one pass/fail row with its residual."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .coulomb import CouplingMatrix, QuadratureSpec, interaction_table, two_body_matrix_elements
from .free_energy import (
    IntegrationPlan,
    ThermoPath,
    bogoliubov_bracket,
    internal_energy_profile,
    thermo_integrate_exact,
    truncation_sweep,
)
from .guards import NumericalQualityError
from .hamiltonian import (
    HamiltonianBlock,
    ModelParams,
    build_truncated_hamiltonian,
    free_energy_free,
    free_energy_upper_bound,
    gibbs_state,
    partition_sandwich,
)
from .lindblad import FilterSpec, build_generator_symmetrized, build_generator_trace_class, build_jump_set
from .oscillator import ladder_matrix, one_body_ladder
from .spectral import ladder_leakage_norm, locality_commutator_norm


@dataclass
class CheckRow:
    check: str
    case: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "check": self.check,
            "case": self.case,
            "value": float(self.value),
            "threshold": float(self.threshold),
            "passed": bool(self.passed),
            "note": self.note,
        }


CHECK_COLUMNS = ("check", "case", "value", "threshold", "passed", "note")


def _le(check, case, value, threshold, note="") -> CheckRow:
    return CheckRow(check, case, float(value), float(threshold), bool(value <= threshold), note)


def _case_label(c: dict) -> str:
    keys = ("n", "d", "M", "alpha", "beta", "sigma_E")
    return ",".join(f"{k}={c[k]}" for k in keys if k in c)


def free_basis_rows(ns, ds, betas) -> list[CheckRow]:
    rows = []
    for n in ns:
        for d in ds:
            for beta in betas:
                block = build_truncated_hamiltonian(ModelParams(n, d, 2, CouplingMatrix.uniform(n, 0.0), beta))
                err = abs(gibbs_state(block, beta).free_energy - free_energy_free(n, d, beta))
                rows.append(_le("free_energy_exact", f"n={n},d={d},beta={beta}", err, 1e-12))
    return rows


def coulomb_oracle_rows(quad: QuadratureSpec) -> list[CheckRow]:
    rows = []
    exact = {3: math.sqrt(2.0 / math.pi), 2: 0.5 * (np.euler_gamma - math.log(2.0))}
    for d, ref in exact.items():
        t = two_body_matrix_elements(d, 2, quad)
        rows.append(_le("coulomb_ground_pair", f"d={d}", abs(t.entries[0, 0, 0, 0] - ref), 1e-6))
        rows.append(_le("coulomb_table_symmetry", f"d={d}", t.raw_asymmetry, 1e-10))
    return rows


def _couplings(c: dict) -> CouplingMatrix:
    return CouplingMatrix.uniform(c["n"], c.get("alpha", 0.0))


def case_rows(c: dict, quad: QuadratureSpec, energy_betas, cache_dir=None) -> list[CheckRow]:
    n, d, M, beta = c["n"], c["d"], c["M"], c["beta"]
    label = _case_label(c)
    couplings = _couplings(c)
    params = ModelParams(n, d, M, couplings, beta, quad)
    block = build_truncated_hamiltonian(params, cache_dir)
    free = block.with_scale(0.0)
    rows = []

    lo, diff, hi = bogoliubov_bracket(block, free, beta)
    rows.append(_le("bogoliubov_order_lower", label, lo - diff, 1e-10))
    rows.append(_le("bogoliubov_order_upper", label, diff - hi, 1e-10))
    half = block.with_scale(0.5)
    lo2, diff2, hi2 = bogoliubov_bracket(block, half, beta)
    rows.append(_le("bogoliubov_order_midpath", label, max(lo2 - diff2, diff2 - hi2), 1e-10))

    prof = internal_energy_profile(block, energy_betas)
    rows.append(_le("internal_energy_monotone", label, float(np.max(np.diff(prof.U))), 1e-10))
    rows.append(_le("thermodynamic_inequality", label, float(-prof.bound_slack.min()), 1e-10))

    low, logZ, up = partition_sandwich(block, beta)
    rows.append(_le("partition_sandwich", label, max(low - logZ, logZ - up), 1e-10))

    F = gibbs_state(block, beta).free_energy
    rows.append(_le("free_energy_upper_bound", label, F - free_energy_upper_bound(n, d, beta, couplings), 1e-12))

    top = int(block.basis.one_body.modes.max())  # largest per-axis occupation retained
    worst = 0.0
    for i in range(n):
        for j in range(d):
            for kind in ("lower", "raise"):
                worst = max(worst, float(np.linalg.norm(ladder_matrix(block.basis, i, j, kind), 2)))
    rows.append(_le("truncated_jump_norm", label, worst, math.sqrt(top + 1) + 1e-12, f"sqrt(Mtilde+1), Mtilde={top}"))

    if n >= 2 and couplings.alpha_max > 0:
        table = interaction_table(d, M, quad, cache_dir=cache_dir)
        for kind, phase in (("lower", -2.0), ("raise", 2.0)):
            A = one_body_ladder(block.basis.one_body, 0, kind)
            rep = locality_commutator_norm(table, A, phase=phase)
            X_norm = float(np.linalg.norm(table.as_matrix(), 2))
            bound = 2.0 * X_norm * ladder_leakage_norm(d, M, 0, kind)
            rows.append(_le(f"locality_commutator_{kind}", label, rep.norm, bound + 1e-12))
            spread = max(abs(v - rep.norm) for v in rep.time_norms.values())
            rows.append(_le(f"commutator_time_invariance_{kind}", label, spread, 1e-10 * max(1.0, rep.norm)))

        path = ThermoPath(params, cache_dir)
        try:
            rep = thermo_integrate_exact(params, IntegrationPlan(16), path=path)
            rise = float(np.max(np.diff(np.append(rep.node_values, rep.details["f_at_1"]))))
            rows.append(_le("integrand_non_increasing", label, rise, 1e-12))
            rows.append(_le("riemann_overestimate", label, -rep.details["riemann_error"], 1e-12))
        except NumericalQualityError as exc:
            rows.append(CheckRow("integrand_non_increasing", label, math.inf, 1e-12, False, str(exc)))

        if c.get("sweep", True) and M >= 3:
            sw = truncation_sweep(n, d, beta, couplings, [M - 2, M - 1], M, quad, cache_dir)
            gap = max(r["trace_distance"] - r["pinsker_rhs"] for r in sw.rows)
            rows.append(_le("pinsker", label, gap, 1e-12))
    return rows


def generator_rows(c: dict, quad: QuadratureSpec, cache_dir=None) -> list[CheckRow]:
    n, d, M, beta = c["n"], c["d"], c["M"], c["beta"]
    sigma_E = math.inf if c.get("sigma_E", "inf") in ("inf", None) else float(c["sigma_E"])
    label = _case_label(c)
    params = ModelParams(n, d, M, _couplings(c), beta, quad)
    block = build_truncated_hamiltonian(params, cache_dir)
    spec = FilterSpec(beta, sigma_E)
    jumps = build_jump_set(block.basis)
    dim = block.dim
    g = gibbs_state(block, beta)
    sigma = g.block_state()
    rows = []

    T = build_generator_trace_class(block, jumps, spec)
    scale = float(np.abs(T.matrix).max())
    trace_res = float(np.abs(np.eye(dim).reshape(-1) @ T.matrix).max()) / scale
    rows.append(_le("trace_preservation", label, trace_res, 1e-10))
    rows.append(_le("gibbs_in_kernel", label, float(np.abs(T.apply(sigma)).max()) / scale, 1e-9))

    S = build_generator_symmetrized(block, jumps, spec)
    herm = float(np.abs(S.matrix - S.matrix.conj().T).max()) / float(np.abs(S.matrix).max())
    rows.append(_le("symmetrized_hermitian", label, herm, 1e-9))
    top = float(np.linalg.eigvalsh(0.5 * (S.matrix + S.matrix.conj().T)).max())
    rows.append(_le("negative_semidefinite", label, top, 1e-9))
    return rows


def run_suite(cfg: dict, cache_dir=None, progress=None) -> list[CheckRow]:
    """Run every battery named in a verify configuration."""
    quad = QuadratureSpec(**cfg.get("quadrature", {}))
    v = cfg["verify"]
    rows: list[CheckRow] = []

    def note(msg):
        if progress:
            progress(msg)

    start = time.perf_counter()
    fe = v.get("free_energy")
    if fe:
        rows += free_basis_rows(fe["n"], fe["d"], fe["beta"])
    if v.get("coulomb_oracles", True):
        rows += coulomb_oracle_rows(quad)
    betas = v.get("energy_betas", [0.25, 0.5, 1.0, 2.0, 4.0])
    for c in v.get("cases", []):
        note(f"case {_case_label(c)}")
        rows += case_rows(c, quad, betas, cache_dir)
    for c in v.get("generator_cases", []):
        note(f"generator {_case_label(c)}")
        rows += generator_rows(c, quad, cache_dir)
    note(f"{len(rows)} checks in {time.perf_counter() - start:.1f}s")
    return rows


__all__ = [
    "CheckRow",
    "CHECK_COLUMNS",
    "free_basis_rows",
    "coulomb_oracle_rows",
    "case_rows",
    "generator_rows",
    "run_suite",
]
