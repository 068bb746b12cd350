"""Command-line experiment runner.

Every subcommand reads a JSON config (validated against CONFIG_SCHEMA, unknown keys rejected),
writes deterministic CSV/JSON artifacts to --out and a run report with timings to
report.json. Exit codes: 0 success, 1 failed invariant (verify), 2 bad config,
3 dimension guard, 4 numerical-quality failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from contextlib import nullcontext
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from .coulomb import (
    CacheError,
    CouplingMatrix,
    QuadratureSpec,
    cache_filename,
    cache_table,
    interaction_table,
    load_table,
    read_header,
    two_body_matrix_elements,
)
from .guards import DimensionGuardError, NumericalQualityError, relaxed_guards

CACHE_ENV = "COULOMB_GIBBS_CACHE"
SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_GUARD, EXIT_NUMERICAL = 0, 1, 2, 3, 4

SUBCOMMANDS = (
    "basis", "matelems", "gibbs", "generator", "gap", "evolve",
    "sweep-truncation", "sweep-gap", "thermo", "estimate", "verify", "cache",
)

_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_sigma = {"oneOf": [_pos, {"const": "inf"}]}
_int_list = {"type": "array", "items": _posint, "minItems": 1}
_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_case = _obj({"n": _posint, "d": {"enum": [1, 2, 3]}, "M": _posint, "alpha": {"type": "number"},
              "beta": _pos, "sigma_E": _sigma, "sweep": {"type": "boolean"}}, ["n", "d", "M", "beta"])

CONFIG_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "model": _obj(
            {
                "n": _posint,
                "d": {"enum": [1, 2, 3]},
                "M": _posint,
                "beta": _pos,
                "couplings": {
                    **_obj({
                        "uniform": {"type": "number"},
                        "weak": {"type": "number"},
                        "matrix": {"type": "array", "items": _num_list},
                        "pairs": {"type": "array", "items": {"type": "array", "prefixItems": [
                            {"type": "integer", "minimum": 0}, {"type": "integer", "minimum": 0},
                            {"type": "number"}], "minItems": 3, "maxItems": 3}},
                        "random": _pos,
                    }),
                    "minProperties": 1,
                    "maxProperties": 1,
                },
            },
            ["n", "d", "M", "beta"],
        ),
        "quadrature": _obj({
            "radial_nodes": {"type": "integer", "minimum": 8},
            "angular_nodes": {"type": "integer", "minimum": 8},
            "tensor_nodes": {"type": "integer", "minimum": 8},
            "singularity_mode": {"enum": ["relative-coordinate-radial", "tensor-grid"]},
            "target_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3},
        }),
        "filter": _obj({"sigma_E": _sigma, "sigma_w": {"oneOf": [_pos, {"type": "null"}]},
                        "picture": {"enum": ["symmetrized", "trace-class"]}}),
        "plan": _obj({"L": _posint, "S": {"oneOf": [_posint, {"type": "null"}]},
                      "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                      "state_source": {"enum": ["exact", "sampler"]},
                      "sampler_epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
        "evolve": _obj({"times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                        "initial": {"enum": ["vacuum", "maximally-mixed"]},
                        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
        "sweep_truncation": _obj({"M_list": _int_list, "M_ref": _posint}, ["M_list", "M_ref"]),
        "sweep_gap": _obj({"n_list": _int_list, "M_list": _int_list, "alpha_list": _num_list,
                           "coupling": {"enum": ["uniform", "weak"]}}, ["n_list", "M_list", "alpha_list"]),
        "estimate": _obj({"epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                          "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                          "M_ref": _posint, "M_candidates": _int_list}, ["epsilon", "delta"]),
        "guards": _obj({"hilbert_dim": _posint}),
        "verify": _obj({
            "free_energy": _obj({"n": _int_list, "d": {"type": "array", "items": {"enum": [1, 2, 3]}},
                                 "beta": {"type": "array", "items": _pos}}, ["n", "d", "beta"]),
            "coulomb_oracles": {"type": "boolean"},
            "energy_betas": {"type": "array", "items": _pos, "minItems": 1},
            "cases": {"type": "array", "items": _case},
            "generator_cases": {"type": "array", "items": _case},
        }),
    },
    ["schema_version"],
)

COMMAND_SECTIONS = {
    "basis": ["model"],
    "matelems": ["model"],
    "gibbs": ["model"],
    "generator": ["model"],
    "gap": ["model"],
    "evolve": ["model"],
    "sweep-truncation": ["model", "sweep_truncation"],
    "sweep-gap": ["model", "sweep_gap"],
    "thermo": ["model", "plan"],
    "estimate": ["model", "estimate"],
    "verify": ["verify"],
    "cache": ["model"],
}

CSV_HELP = """CSV columns per subcommand:
  basis             index, slots, modes, energy
  matelems          a, b, c, e, value
  gibbs             k, energy, population
  gap               k, eigenvalue
  evolve            t, trace_distance, contraction_bound
  sweep-truncation  M, dim, F_M, free_energy_error, trace_distance, relative_entropy, pinsker_rhs,
                    upper_bound, tail_weight
  sweep-gap         n, d, M, alpha_max, beta, sigma_E, gap, kernel_dim, zero_threshold,
                    hermiticity_residual
  thermo, estimate  k, s, integrand, width
  verify            check, case, value, threshold, passed, note
"""


class ConfigError(ValueError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(message)
        self.pointer = pointer


# ---------------------------------------------------------------------------
# config handling


def default_verify_config() -> dict:
    text = resources.files("coulomb_gibbs").joinpath("data/verify_default.json").read_text()
    return json.loads(text)


def _parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides or []:
        path, value = _parse_override(item)
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object", "/" + "/".join(path))
        node[path[-1]] = value
    return cfg


def validate_config(cfg: dict, command: str | None = None) -> dict:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{pointer}: {err.message}", pointer)
    for section in COMMAND_SECTIONS.get(command, []):
        if section not in cfg:
            raise ConfigError(f"subcommand {command!r} needs a {section!r} section", "/" + section)
    model = cfg.get("model")
    if model and "couplings" in model:
        c = model["couplings"]
        if "matrix" in c and (len(c["matrix"]) != model["n"] or any(len(r) != model["n"] for r in c["matrix"])):
            raise ConfigError("coupling matrix must be n x n", "/model/couplings/matrix")
        for k, (i, j, _) in enumerate(c.get("pairs", [])):
            if i == j or max(i, j) >= model["n"]:
                raise ConfigError(f"invalid pair ({i}, {j})", f"/model/couplings/pairs/{k}")
    return cfg


def load_config(path, command: str, overrides=None) -> dict:
    if path is None:
        if command != "verify":
            raise ConfigError(f"subcommand {command!r} needs --config", "")
        cfg = default_verify_config()
    else:
        try:
            cfg = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object", "")
    return validate_config(apply_overrides(cfg, overrides), command)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _couplings(model: dict, seed: int) -> CouplingMatrix:
    n = model["n"]
    c = model.get("couplings", {"uniform": 0.0})
    if "uniform" in c:
        return CouplingMatrix.uniform(n, c["uniform"])
    if "weak" in c:
        return CouplingMatrix.weak_coupling(n, c["weak"])
    if "matrix" in c:
        return CouplingMatrix(np.array(c["matrix"], dtype=float))
    if "pairs" in c:
        return CouplingMatrix.from_pairs(n, {(i, j): v for i, j, v in c["pairs"]})
    return CouplingMatrix.random(n, c["random"], np.random.default_rng(seed))


def _params(cfg: dict, seed: int):
    from .hamiltonian import ModelParams

    m = cfg["model"]
    return ModelParams(m["n"], m["d"], m["M"], _couplings(m, seed), m["beta"], _quad(cfg))


def _quad(cfg: dict) -> QuadratureSpec:
    return QuadratureSpec(**cfg.get("quadrature", {}))


def _filter(cfg: dict, beta: float):
    from .lindblad import FilterSpec

    f = cfg.get("filter", {})
    sigma_E = f.get("sigma_E", "inf")
    return FilterSpec(beta, math.inf if sigma_E == "inf" else float(sigma_E), f.get("sigma_w"))


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            values = [r[c] for c in columns] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in values])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def cache_dir_from_env() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "coulomb_gibbs"


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, checks)


def cmd_basis(cfg, ctx):
    from .oscillator import product_basis

    m = cfg["model"]
    basis = product_basis(m["n"], m["d"], m["M"], max_dim=cfg.get("guards", {}).get("hilbert_dim"))
    modes = basis.one_body.modes
    energies = basis.energies()
    rows = []
    for idx, slots in enumerate(basis.states()):
        rows.append({
            "index": idx,
            "slots": ";".join(str(s) for s in slots),
            "modes": ";".join("(" + " ".join(str(int(k)) for k in modes[s]) + ")" for s in slots),
            "energy": float(energies[idx]),
        })
    out = write_csv(ctx.out / "basis.csv", ["index", "slots", "modes", "energy"], rows)
    return [out], []


def cmd_matelems(cfg, ctx):
    m = cfg["model"]
    table = interaction_table(m["d"], m["M"], _quad(cfg), cache_dir=ctx.cache_dir)
    M = table.M
    idx = np.indices((M,) * 4).reshape(4, -1).T
    rows = [(*map(int, k), float(table.entries[tuple(k)])) for k in idx]
    out = write_csv(ctx.out / "matelems.csv", ["a", "b", "c", "e", "value"], rows)
    meta = write_json(ctx.out / "matelems.json", {
        "d": table.d, "M": M, "kernel": table.kind, "checksum": table.checksum,
        "quad_fingerprint": table.quad_fingerprint, "raw_asymmetry": table.raw_asymmetry,
        "convergence_delta": table.convergence_delta,
    })
    checks = [_check("table_symmetry", table.raw_asymmetry, 1e-10)]
    return [out, meta], checks


def _check(name, value, threshold):
    return {"check": name, "value": float(value), "threshold": float(threshold), "passed": bool(value <= threshold)}


def cmd_gibbs(cfg, ctx):
    from .hamiltonian import (build_truncated_hamiltonian, free_energy_free, free_energy_upper_bound,
                              gibbs_state, partition_sandwich)

    p = _params(cfg, ctx.seed)
    block = build_truncated_hamiltonian(p, ctx.cache_dir)
    g = gibbs_state(block, p.beta)
    lo, logZ, hi = partition_sandwich(block, p.beta)
    F_up = free_energy_upper_bound(p.n, p.d, p.beta, p.couplings)
    summary = {
        "F": g.free_energy,
        "log_Z": g.log_Z,
        "tail_weight": g.tail_weight,
        "F_free": free_energy_free(p.n, p.d, p.beta),
        "F_upper_bound": F_up,
        "log_Z_sandwich": [lo, hi],
        "dim": block.dim,
    }
    rows = [(k, float(e), float(w)) for k, (e, w) in enumerate(zip(g.energies, g.populations))]
    outs = [write_json(ctx.out / "gibbs.json", summary),
            write_csv(ctx.out / "gibbs.csv", ["k", "energy", "population"], rows)]
    checks = [_check("partition_sandwich", max(lo - logZ, logZ - hi), 1e-10),
              _check("free_energy_upper_bound", g.free_energy - F_up, 1e-12)]
    return outs, checks


def _generator(cfg, ctx, picture=None):
    from .hamiltonian import build_truncated_hamiltonian
    from .lindblad import build_generator_symmetrized, build_generator_trace_class, build_jump_set

    p = _params(cfg, ctx.seed)
    block = build_truncated_hamiltonian(p, ctx.cache_dir)
    spec = _filter(cfg, p.beta)
    picture = picture or cfg.get("filter", {}).get("picture", "symmetrized")
    jumps = build_jump_set(block.basis)
    build = build_generator_symmetrized if picture == "symmetrized" else build_generator_trace_class
    return p, block, spec, build(block, jumps, spec, basis="energy", guard_override=ctx.guard_override)


def cmd_generator(cfg, ctx):
    from .hamiltonian import gibbs_state

    p, block, spec, G = _generator(cfg, ctx)
    g = gibbs_state(block, p.beta)
    dim = block.dim
    scale = float(np.abs(G.matrix).max())
    if G.picture == "symmetrized":
        root = G.to_basis_of(g.block_power(0.5))
        kernel = float(np.abs(G.apply(root)).max()) / scale
        herm = float(np.abs(G.matrix - G.matrix.conj().T).max()) / scale
        trace = float("nan")
    else:
        kernel = float(np.abs(G.apply(G.to_basis_of(g.block_state()))).max()) / scale
        trace = float(np.abs(np.eye(dim).reshape(-1) @ G.matrix).max()) / scale
        herm = float("nan")
    summary = {"picture": G.picture, "variant": G.variant, "dim": dim, "superoperator_dim": dim * dim,
               "kernel_residual": kernel, "trace_residual": trace, "hermiticity_residual": herm,
               "recorded_hermiticity_residual": G.hermiticity_residual, "provenance": G.provenance}
    checks = [_check("gibbs_in_kernel", kernel, 1e-9)]
    if G.picture == "symmetrized":
        checks.append(_check("symmetrized_hermitian", herm, 1e-9))
    else:
        checks.append(_check("trace_preservation", trace, 1e-10))
    return [write_json(ctx.out / "generator.json", summary)], checks


def cmd_gap(cfg, ctx):
    from .spectral import spectral_summary

    p, block, spec, G = _generator(cfg, ctx, picture="symmetrized")
    s = spectral_summary(G)
    rows = [(k, float(np.real(v))) for k, v in enumerate(s.eigenvalues)]
    summary = {"gap": s.gap, "kernel_dim": s.kernel_dim, "zero_threshold": s.zero_threshold,
               "max_eigenvalue": s.max_eigenvalue, "hermiticity_residual": s.hermiticity_residual}
    outs = [write_json(ctx.out / "gap.json", summary),
            write_csv(ctx.out / "spectrum.csv", ["k", "eigenvalue"], rows)]
    checks = [_check("negative_semidefinite", s.max_eigenvalue, 1e-9),
              _check("gap_positive", 10 * s.zero_threshold - s.gap, 0.0)]
    return outs, checks


def cmd_evolve(cfg, ctx):
    from .hamiltonian import gibbs_state
    from .spectral import mixing_time_empirical, spectral_summary, trace_norm, trajectory, warmness_constant

    e = cfg.get("evolve", {})
    p, block, spec, G = _generator(cfg, ctx, picture="trace-class")
    g = gibbs_state(block, p.beta)
    dim = block.dim
    if e.get("initial", "vacuum") == "vacuum":
        rho0 = np.zeros((dim, dim), dtype=complex)
        rho0[0, 0] = 1.0
    else:
        rho0 = np.eye(dim, dtype=complex) / dim
    gap = spectral_summary(_generator(cfg, ctx, picture="symmetrized")[3]).gap
    c = warmness_constant(rho0, g)
    times = np.array(e.get("times", list(np.linspace(0.0, 10.0, 21))), dtype=float)
    target = g.block_state()
    states = trajectory(G, rho0, times)  # product basis in and out
    dists = [trace_norm(r - target) for r in states]
    bound = math.sqrt(c) * np.exp(-gap * times / 2.0)
    rows = [(float(t), float(dd), float(b)) for t, dd, b in zip(times, dists, bound)]
    outs = [write_csv(ctx.out / "evolve.csv", ["t", "trace_distance", "contraction_bound"], rows)]
    checks = [_check("contraction_bound", max(dd - b for dd, b in zip(dists, bound)), 1e-6)]
    summary = {"gap": gap, "warmness": c}
    if "epsilon" in e:
        rec = mixing_time_empirical(G, rho0, g, e["epsilon"], gap=gap)
        summary.update({"t_mix": rec.t_mix, "t_bound": rec.t_bound, "fitted_rate": rec.fitted_rate,
                        "monotone": rec.monotone})
        checks.append(_check("mixing_time_bound", rec.t_mix - rec.t_bound, 0.0))
    outs.append(write_json(ctx.out / "evolve.json", summary))
    return outs, checks


def cmd_sweep_truncation(cfg, ctx):
    from .free_energy import truncation_sweep

    p = _params(cfg, ctx.seed)
    s = cfg["sweep_truncation"]
    sw = truncation_sweep(p.n, p.d, p.beta, p.couplings, s["M_list"], s["M_ref"], p.quad, ctx.cache_dir)
    cols = ["M", "dim", "F_M", "free_energy_error", "trace_distance", "relative_entropy", "pinsker_rhs",
            "upper_bound", "tail_weight"]
    outs = [write_csv(ctx.out / "sweep_truncation.csv", cols, sw.rows),
            write_json(ctx.out / "sweep_truncation.json", {
                "F_ref": sw.F_ref, "slope_free_energy": sw.slope_free_energy,
                "slope_trace_distance": sw.slope_trace_distance, "reference_slopes": sw.reference_slopes,
                "strictly_decreasing_F": sw.strictly_decreasing_F,
                "strictly_decreasing_trace": sw.strictly_decreasing_trace})]
    checks = [_check("free_energy_error_monotone", 0.0 if sw.monotone else 1.0, 0.0),
              _check("pinsker", max(r["trace_distance"] - r["pinsker_rhs"] for r in sw.rows), 1e-12),
              _check("free_energy_upper_bound", 0.0 if sw.upper_bound_ok else 1.0, 0.0)]
    return outs, checks


def cmd_sweep_gap(cfg, ctx):
    from .hamiltonian import ModelParams
    from .spectral import SWEEP_COLUMNS, gap_sweep, uniform_gap_check

    m = cfg["model"]
    s = cfg["sweep_gap"]
    weak = s.get("coupling", "uniform") == "weak"
    plan = []
    for n in s["n_list"]:
        for M in s["M_list"]:
            for a in s["alpha_list"]:
                c = CouplingMatrix.weak_coupling(n, a) if weak else CouplingMatrix.uniform(n, a)
                plan.append(ModelParams(n, m["d"], M, c, m["beta"], _quad(cfg)))
    spec = _filter(cfg, m["beta"])
    rows = gap_sweep(plan, spec, jobs=ctx.jobs, guard_override=ctx.guard_override, cache_dir=ctx.cache_dir)
    cols = [c for c in SWEEP_COLUMNS if c != "wall_time_s"]
    outs = [write_csv(ctx.out / "sweep_gap.csv", cols, rows)]
    ctx.timings["gap_points_s"] = [r["wall_time_s"] for r in rows]
    checks = [_check("gap_positive", max(10 * r["zero_threshold"] - r["gap"] for r in rows), 0.0)]
    if any(r["n"] == 1 for r in rows):
        ok, gmin, g1 = uniform_gap_check(rows)
        outs.append(write_json(ctx.out / "sweep_gap.json", {"uniform_gap": ok, "min_gap": gmin, "gap_n1": g1}))
        checks.append(_check("uniform_gap", 0.75 * g1 - gmin, 0.0))
    return outs, checks


def cmd_thermo(cfg, ctx):
    from .free_energy import IntegrationPlan, ThermoPath, thermo_integrate_exact, thermo_integrate_sampled

    p = _params(cfg, ctx.seed)
    pl = cfg["plan"]
    plan = IntegrationPlan(pl.get("L", 64), pl.get("S"), pl.get("delta", 0.1), ctx.seed)
    source = pl.get("state_source", "exact")
    if source == "sampler" and not plan.S:
        raise ConfigError("the sampler state source needs a shot count S", "/plan/state_source")
    sigma_E = _filter(cfg, p.beta).sigma_E
    path = ThermoPath(p, ctx.cache_dir, state_source=source,
                      sampler_epsilon=pl.get("sampler_epsilon", 1e-3), sigma_E=sigma_E)
    rep = (thermo_integrate_sampled if plan.S else thermo_integrate_exact)(p, plan, path=path)
    (ctx.out / "thermo.json").write_text(rep.to_text() + "\n")
    (ctx.out / "thermo_nodes.csv").write_text(rep.node_csv())
    checks = [_check("integrand_non_increasing", 0.0 if rep.monotone else 1.0, 0.0)]
    return [ctx.out / "thermo.json", ctx.out / "thermo_nodes.csv"], checks


def cmd_estimate(cfg, ctx):
    from .free_energy import estimate_free_energy

    p = _params(cfg, ctx.seed)
    e = cfg["estimate"]
    kw = {k: e[k] for k in ("M_ref", "M_candidates") if k in e}
    rep = estimate_free_energy(p.n, p.d, p.beta, p.couplings, e["epsilon"], e["delta"], ctx.seed,
                               quad=p.quad, cache_dir=ctx.cache_dir, **kw)
    (ctx.out / "estimate.json").write_text(rep.to_text() + "\n")
    (ctx.out / "estimate_nodes.csv").write_text(rep.node_csv())
    return [ctx.out / "estimate.json", ctx.out / "estimate_nodes.csv"], []


def cmd_verify(cfg, ctx):
    from .checks import CHECK_COLUMNS, run_suite

    rows = run_suite(cfg, cache_dir=ctx.cache_dir, progress=lambda m: print(m, file=sys.stderr))
    out = write_csv(ctx.out / "verify.csv", CHECK_COLUMNS, [r.as_dict() for r in rows])
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} invariant checks passed", file=sys.stderr)
    for r in failed:
        print(f"FAIL {r.check} [{r.case}] value={r.value:.3e} threshold={r.threshold:.3e}", file=sys.stderr)
    checks = [{"check": r.check, "case": r.case, "value": r.value, "threshold": r.threshold, "passed": r.passed}
              for r in rows]
    return [out], checks


def cmd_cache(cfg, ctx):
    m = cfg["model"]
    quad = _quad(cfg)
    path = ctx.cache_dir / cache_filename(m["d"], m["M"], quad)
    action = ctx.action
    record = {"action": action, "path": str(path)}
    if action == "build":
        if path.exists() and not ctx.force:
            try:
                load_table(path, d=m["d"], M=m["M"], quad_fingerprint=quad.fingerprint())
                record["status"] = "present"
            except CacheError as exc:
                raise NumericalQualityError(f"{exc}; rerun with --force to rebuild") from exc
        else:
            table = two_body_matrix_elements(m["d"], m["M"], quad)
            cache_table(table, path)
            record["status"] = "built"
        record["header"] = read_header(path)
    elif action == "inspect":
        if not path.exists():
            raise ConfigError(f"no cache entry at {path}", "/model")
        record["header"] = read_header(path)
    elif action == "evict":
        record["status"] = "evicted" if path.exists() else "absent"
        path.unlink(missing_ok=True)
    elif action == "list":
        record["entries"] = sorted(p.name for p in ctx.cache_dir.glob("table_*.bin")) if ctx.cache_dir.exists() else []
    print(json.dumps(_plain(record), indent=2, sort_keys=True))
    return [write_json(ctx.out / "cache.json", record)], []


COMMANDS = {
    "basis": cmd_basis,
    "matelems": cmd_matelems,
    "gibbs": cmd_gibbs,
    "generator": cmd_generator,
    "gap": cmd_gap,
    "evolve": cmd_evolve,
    "sweep-truncation": cmd_sweep_truncation,
    "sweep-gap": cmd_sweep_gap,
    "thermo": cmd_thermo,
    "estimate": cmd_estimate,
    "verify": cmd_verify,
    "cache": cmd_cache,
}


# ---------------------------------------------------------------------------
# entry point


class _Context:
    def __init__(self, args, seed):
        self.out = Path(args.out)
        self.seed = seed
        self.jobs = args.jobs
        self.force = args.force
        self.guard_override = args.guard_override
        self.action = getattr(args, "action", None)
        self.cache_dir = cache_dir_from_env()
        self.timings: dict = {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coulomb-gibbs",
        description="Truncated Coulomb-gas Gibbs states, Lindblad samplers and free-energy estimation.",
        epilog=CSV_HELP + f"\nThe interaction-table cache lives in ${CACHE_ENV} (default ~/.cache/coulomb_gibbs).",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "cache":
            p.add_argument("action", choices=["build", "inspect", "evict", "list"])
        p.add_argument("--config", help="JSON config file" + (" (default: shipped suite)" if name == "verify" else ""))
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--force", action="store_true", help="rebuild cache entries even if present")
        p.add_argument("--guard-override", action="store_true", help="lift the desk-scale size guards")
        p.add_argument("--set", dest="overrides", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config value (value parsed as JSON)")
    return parser


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _error_record(kind: str, exc: Exception, code: int, out: Path | None, **extra) -> int:
    record = {"error": kind, "exit_code": code, "message": str(exc), **extra}
    text = json.dumps(record, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.command, args.overrides)
    except ConfigError as exc:
        return _error_record("config", exc, EXIT_CONFIG, out, pointer=exc.pointer)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    ctx = _Context(args, seed)
    out.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    guard_ctx = relaxed_guards() if args.guard_override else nullcontext()
    try:
        with guard_ctx:
            outputs, checks = COMMANDS[args.command](cfg, ctx)
    except DimensionGuardError as exc:
        return _error_record("dimension-guard", exc, EXIT_GUARD, out)
    except NumericalQualityError as exc:
        return _error_record("numerical-quality", exc, EXIT_NUMERICAL, out)
    except ConfigError as exc:
        return _error_record("config", exc, EXIT_CONFIG, out, pointer=exc.pointer)
    except (ValueError, KeyError) as exc:
        return _error_record("config", exc, EXIT_CONFIG, out, pointer="")
    report = {
        "command": args.command,
        "version": _version(),
        "started": started,
        "wall_time_s": time.perf_counter() - t0,
        "timings": ctx.timings,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "outputs": [Path(o).name for o in outputs],
        "checks": checks,
    }
    write_json(out / "report.json", report)
    failed = [c for c in checks if not c["passed"]]
    return EXIT_CHECK_FAILED if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
