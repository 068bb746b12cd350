"""Two-body interaction matrix elements in the oscillator basis and n-body assembly.

Matrix elements V[a,b,c,e] = <phi_a (x) phi_b| w(x-y) |phi_c (x) phi_e> are computed in
centre-of-mass / relative coordinates R = (x+y)/sqrt2, r = (x-y)/sqrt2. The Gaussian factor
of the four Hermite functions separates as exp(-R^2 - r^2), the remaining factor is a
polynomial, so

* the R integral is done per axis with Gauss-Hermite (exact for the polynomial degree), and
* the r integral is done in polar form: an exact angular rule times a Gauss-Laguerre rule in
  t = |r|^2, with log-modified weights for the logarithmic kernels.

Every rule is exact for the polynomial degrees that occur, so the only error is rounding.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import mpmath
import numpy as np
from scipy import special

from .guards import NumericalQualityError
from .oscillator import OneBodyBasis, ProductBasis, enumerate_one_body_basis, hermite_polynomial_factors

KERNEL_KIND = {1: "log", 2: "log", 3: "inverse"}
MAX_TABLE_M = 64
FORMAT_VERSION = 1
_MAGIC = b"CGTABLE\x00"


class CacheError(RuntimeError):
    pass


class ChecksumError(CacheError):
    pass


class CacheVersionError(CacheError):
    """Format version or metadata (d, M, kind, fingerprint) does not match."""


def kernel(d: int, r) -> np.ndarray:
    """w_d(r) for |r| given: -log|r| in d=1,2 and 1/|r| in d=3."""
    r = np.asarray(r, dtype=float)
    if KERNEL_KIND[d] == "log":
        return -np.log(r)
    return 1.0 / r


@dataclass(frozen=True)
class QuadratureSpec:
    radial_nodes: int = 200
    angular_nodes: int = 64
    tensor_nodes: int = 40
    singularity_mode: str = "relative-coordinate-radial"
    target_tol: float = 1e-7

    def __post_init__(self):
        for name in ("radial_nodes", "angular_nodes", "tensor_nodes"):
            if int(getattr(self, name)) < 8:
                raise ValueError(f"{name} must be >= 8")
        if self.singularity_mode not in ("relative-coordinate-radial", "tensor-grid"):
            raise ValueError(f"unknown singularity_mode {self.singularity_mode!r}")
        if not 0.0 < self.target_tol <= 1e-3:
            raise ValueError("target_tol must lie in (0, 1e-3]")

    def as_dict(self) -> dict:
        return {
            "radial_nodes": int(self.radial_nodes),
            "angular_nodes": int(self.angular_nodes),
            "tensor_nodes": int(self.tensor_nodes),
            "singularity_mode": self.singularity_mode,
            "target_tol": float(self.target_tol),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class InteractionTable:
    d: int
    M: int
    kind: str
    entries: np.ndarray = field(repr=False)
    quad_fingerprint: str = ""
    raw_asymmetry: float = 0.0
    convergence_delta: float = 0.0

    @property
    def checksum(self) -> str:
        return _payload_checksum(_payload(self.entries))

    def as_matrix(self) -> np.ndarray:
        """Rows (a,b), columns (c,e)."""
        return self.entries.reshape(self.M * self.M, self.M * self.M)


@dataclass
class CouplingMatrix:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("coupling matrix must be square")
        upper = np.triu(a, 1)
        self.alpha = upper + upper.T

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    @property
    def alpha_max(self) -> float:
        return float(np.abs(self.alpha).max()) if self.n > 1 else 0.0

    @property
    def A_n(self) -> float:
        return float(np.abs(self.alpha).sum(axis=1).max()) if self.n > 1 else 0.0

    @property
    def B_n(self) -> float:
        return float(np.abs(np.triu(self.alpha, 1)).sum())

    def pairs(self):
        for i in range(self.n):
            for j in range(i + 1, self.n):
                yield i, j, float(self.alpha[i, j])

    def scaled(self, s: float) -> "CouplingMatrix":
        return CouplingMatrix(self.alpha * s)

    @classmethod
    def uniform(cls, n: int, value: float) -> "CouplingMatrix":
        return cls(np.full((n, n), float(value)))

    @classmethod
    def weak_coupling(cls, n: int, eps: float) -> "CouplingMatrix":
        return cls.uniform(n, eps / n**2)

    @classmethod
    def from_pairs(cls, n: int, pairs: dict) -> "CouplingMatrix":
        a = np.zeros((n, n))
        for (i, j), v in pairs.items():
            if i == j:
                raise ValueError("self-couplings are not allowed")
            a[min(i, j), max(i, j)] = v
        return cls(a)

    @classmethod
    def random(cls, n: int, scale: float, rng: np.random.Generator) -> "CouplingMatrix":
        return cls(rng.uniform(-scale, scale, size=(n, n)))


# ---------------------------------------------------------------------------
# quadrature rules


@lru_cache(maxsize=64)
def _log_laguerre_weights(N: int, alpha: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Laguerre nodes/weights plus log-modified weights, computed in extended precision.

    The log weights are lam_i * sum_k m_k p_k(t_i), where p_k are the orthonormal polynomials
    of t^alpha e^-t and m_k = int t^alpha e^-t log(t) p_k(t) dt has a closed form. The sum
    cancels badly at the large nodes, hence the multiprecision evaluation.
    """
    with mpmath.workdps(60):
        a = mpmath.mpf(alpha)
        g = mpmath.gamma(a + 1)
        t0, _ = special.roots_genlaguerre(N, alpha)
        nodes = [mpmath.findroot(lambda x: mpmath.laguerre(N, a, x), mpmath.mpf(float(x))) for x in t0]
        moments = [mpmath.sqrt(g) * mpmath.digamma(a + 1)]
        for k in range(1, N):
            norm = mpmath.sqrt(mpmath.gamma(k + a + 1) / mpmath.factorial(k))
            moments.append((-1) ** (k + 1) * g / (k * norm))
        t, lam, lam_log = [], [], []
        for ti in nodes:
            p = [1 / mpmath.sqrt(g), (ti - (a + 1)) / mpmath.sqrt(g * (a + 1))]
            for k in range(1, N - 1):
                nxt = ((ti - (2 * k + a + 1)) * p[k] - mpmath.sqrt(k * (k + a)) * p[k - 1]) / mpmath.sqrt(
                    (k + 1) * (k + 1 + a)
                )
                p.append(nxt)
            p = p[:N]
            christoffel = 1 / mpmath.fsum(pk * pk for pk in p)
            t.append(float(ti))
            lam.append(float(christoffel))
            lam_log.append(float(christoffel * mpmath.fsum(m * pk for m, pk in zip(moments, p))))
    return np.array(t), np.array(lam), np.array(lam_log)


def laguerre_rule(N: int, alpha: float, with_log: bool = False):
    """Nodes t_i and weights for int_0^inf t^alpha e^-t g(t) dt (and the log(t)-weighted twin).

    Both rules are exact for polynomials g of degree < N.
    """
    if not with_log:
        return special.roots_genlaguerre(N, alpha)
    t, lam, lam_log = _log_laguerre_weights(int(N), float(alpha))
    return t.copy(), lam.copy(), lam_log.copy()


def _radial_rule(d: int, N: int):
    """Nodes rho_i and weights for int_0^inf rho^{d-1} e^{-rho^2} w_d(sqrt2 rho) S(rho) drho."""
    if d == 3:
        t, lam = laguerre_rule(N, 0.0)
        return np.sqrt(t), lam / (2.0 * math.sqrt(2.0))
    alpha = 0.0 if d == 2 else -0.5
    t, lam, lam_log = laguerre_rule(N, alpha, with_log=True)
    w = 0.5 * (-0.5 * math.log(2.0) * lam - 0.5 * lam_log)
    return np.sqrt(t), w


def _angular_rule(d: int, N: int):
    """Unit vectors and weights integrating trigonometric/spherical polynomials of degree < N exactly."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        phi = 2.0 * np.pi * np.arange(N) / N
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(N, 2.0 * np.pi / N)
    n_theta = max((N + 1) // 2, 1)
    z, wz = special.roots_legendre(n_theta)
    phi = 2.0 * np.pi * np.arange(N) / N
    s = np.sqrt(1.0 - z * z)
    dirs = np.stack(
        [
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(z, N),
        ],
        axis=1,
    )
    return dirs, np.repeat(wz, N) * (2.0 * np.pi / N)


def _tensor_node_set(d: int, N: int):
    """Tensor Gauss-Hermite grid in r with the kernel folded into the weights."""
    N += N % 2  # keep r = 0 off the grid
    x, w = special.roots_hermite(N)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(pts.shape[0])
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * g.ravel()
    return pts, wts * kernel(d, math.sqrt(2.0) * np.linalg.norm(pts, axis=1))


def _radial_node_set(d: int, quad: QuadratureSpec, degree: int, refine: bool):
    """Relative-coordinate polar nodes and weights (kernel and Gaussian measure included).

    Node counts beyond what exactness needs are not used; the refined set adds a few more.
    """
    scale, pad = (2, 8) if refine else (1, 4)
    n_rad = min(quad.radial_nodes * scale, degree // 2 + 1 + pad)
    n_ang = min(quad.angular_nodes * scale, degree + 1 + pad)
    rho, w_rad = _radial_rule(d, n_rad)
    dirs, w_ang = _angular_rule(d, n_ang)
    pts = (rho[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    wts = np.outer(w_rad, w_ang).ravel()
    return pts, wts


def _axis_tables(kmax: int, coords: np.ndarray, n_com: int) -> np.ndarray:
    """T[a,c,b,e,node] = int e^{-R^2} psi_a(X) psi_c(X) psi_b(Y) psi_e(Y) dR along one axis.

    X = (R + r)/sqrt2, Y = (R - r)/sqrt2 and psi_k is the polynomial part of the Hermite function.
    """
    R, wR = special.roots_hermite(n_com)
    X = (R[:, None] + coords[None, :]) / math.sqrt(2.0)
    Y = (R[:, None] - coords[None, :]) / math.sqrt(2.0)
    hx = hermite_polynomial_factors(kmax, X)
    hy = hermite_polynomial_factors(kmax, Y)
    px = hx[:, None] * hx[None, :]
    py = hy[:, None] * hy[None, :]
    return np.einsum("acRn,beRn,R->acben", px, py, wR, optimize=True)


def _evaluate(one_body: OneBodyBasis, pts: np.ndarray, wts: np.ndarray) -> np.ndarray:
    d, M = one_body.d, one_body.M
    kmax = one_body.max_level
    K = kmax + 1
    n_com = 2 * kmax + 2
    modes = one_body.modes
    A, B, C, E = np.meshgrid(*([np.arange(M)] * 4), indexing="ij")
    A, B, C, E = (x.ravel() for x in (A, B, C, E))
    flat = []
    tables = []
    for j in range(d):
        T = _axis_tables(kmax, pts[:, j], n_com).reshape(K**4, -1)
        tables.append(T * wts[None, :] if j == 0 else T)
        q = ((modes[A, j] * K + modes[C, j]) * K + modes[B, j]) * K + modes[E, j]
        flat.append(q)
    out = np.empty(A.size)
    n_nodes = pts.shape[0]
    chunk = max(1, int(2e7 // max(n_nodes, 1)))
    for start in range(0, A.size, chunk):
        sl = slice(start, start + chunk)
        acc = tables[0][flat[0][sl]]
        for j in range(1, d):
            acc = acc * tables[j][flat[j][sl]]
        out[sl] = acc.sum(axis=1)
    return out.reshape(M, M, M, M)


def symmetrize_table(V: np.ndarray) -> tuple[np.ndarray, float]:
    """Average V over its Hermitian and exchange images; return the result and the raw asymmetry."""
    herm = np.conj(V.transpose(2, 3, 0, 1))
    exch = V.transpose(1, 0, 3, 2)
    both = np.conj(V.transpose(3, 2, 1, 0))
    sym = (V + herm + exch + both) / 4.0
    return sym, float(np.abs(V - sym).max())


def two_body_matrix_elements(d: int, M: int, quad: QuadratureSpec | None = None) -> InteractionTable:
    quad = quad or QuadratureSpec()
    if d not in KERNEL_KIND:
        raise ValueError(f"dimension d must be 1, 2 or 3, got {d}")
    if not 1 <= M <= MAX_TABLE_M:
        raise ValueError(f"table cutoff M must be in [1, {MAX_TABLE_M}], got {M}")
    one_body = enumerate_one_body_basis(d, M)
    if quad.singularity_mode == "tensor-grid":
        # O(1/N) convergence on the kernel singularity; Richardson-extrapolate two levels
        N = quad.tensor_nodes
        half, full, double = (_evaluate(one_body, *_tensor_node_set(d, k)) for k in (N // 2, N, 2 * N))
        coarse, fine = 2 * full - half, 2 * double - full
    else:
        degree = 4 * one_body.max_level
        coarse = _evaluate(one_body, *_radial_node_set(d, quad, degree, refine=False))
        fine = _evaluate(one_body, *_radial_node_set(d, quad, degree, refine=True))
    scale = max(float(np.abs(fine).max()), 1e-300)
    delta = float(np.abs(coarse - fine).max()) / scale
    if not np.all(np.isfinite(coarse)):
        raise NumericalQualityError("non-finite interaction matrix element")
    if delta > quad.target_tol:
        raise NumericalQualityError(
            f"interaction quadrature not converged for d={d}, M={M}: relative delta {delta:.3e} "
            f"between node counts exceeds target {quad.target_tol:.1e}"
        )
    sym, asym = symmetrize_table(fine if quad.singularity_mode == "tensor-grid" else coarse)
    return InteractionTable(
        d=d,
        M=M,
        kind=KERNEL_KIND[d],
        entries=sym,
        quad_fingerprint=quad.fingerprint(),
        raw_asymmetry=asym,
        convergence_delta=delta,
    )


@lru_cache(maxsize=32)
def _memo_table(d: int, M: int, quad: QuadratureSpec) -> InteractionTable:
    return two_body_matrix_elements(d, M, quad)


def interaction_table(d: int, M: int, quad: QuadratureSpec | None = None, cache_dir=None) -> InteractionTable:
    """Fetch a table from the in-process memo or on-disk cache, building it if needed."""
    quad = quad or QuadratureSpec()
    if cache_dir is None:
        return _memo_table(d, M, quad)
    path = Path(cache_dir) / cache_filename(d, M, quad)
    if path.exists():
        try:
            return load_table(path, d=d, M=M, quad_fingerprint=quad.fingerprint())
        except CacheError:
            pass
    table = _memo_table(d, M, quad)
    cache_table(table, path)
    return table


def assemble_interaction(basis: ProductBasis, table: InteractionTable, couplings: CouplingMatrix) -> np.ndarray:
    if table.M != basis.M or table.d != basis.d:
        raise ValueError(f"table (d={table.d}, M={table.M}) does not match basis (d={basis.d}, M={basis.M})")
    if couplings.n != basis.n:
        raise ValueError(f"couplings are for n={couplings.n}, basis has n={basis.n}")
    W = np.zeros((basis.dim, basis.dim))
    for i, j, a in couplings.pairs():
        if a != 0.0:
            W += a * pair_interaction(basis, table, i, j)
    return W


def pair_interaction(basis: ProductBasis, table: InteractionTable, i: int, j: int) -> np.ndarray:
    """The table acting on particle slots (i, j), identity on the rest."""
    n, M = basis.n, basis.M
    if not (0 <= i < n and 0 <= j < n and i != j):
        raise ValueError(f"invalid particle pair ({i}, {j}) for n={n}")
    rest = [k for k in range(n) if k not in (i, j)]
    op = np.kron(table.as_matrix(), np.eye(M ** len(rest)))
    order = [i, j] + rest
    inv = np.argsort(order)
    op = op.reshape((M,) * (2 * n))
    op = op.transpose(list(inv) + [n + k for k in inv])
    return op.reshape(basis.dim, basis.dim)


# ---------------------------------------------------------------------------
# Monte Carlo oracle


def sample_mode_density(k, size: int, rng: np.random.Generator) -> np.ndarray:
    """Samples from |phi_k|^2 (product over axes) by inverse-CDF on a fine grid."""
    k = np.atleast_1d(np.asarray(k, dtype=int))
    out = np.empty((size, k.size))
    for axis, kj in enumerate(k):
        half = math.sqrt(2 * kj + 1) + 9.0
        x = np.linspace(-half, half, 40001)
        dens = hermite_polynomial_factors(int(kj), x)[kj] ** 2 * np.exp(-x * x)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        out[:, axis] = np.interp(rng.random(size), cdf, x)
    return out


def monte_carlo_diagonal(d: int, mode_a, mode_b, samples: int, rng: np.random.Generator, chunk: int = 1_000_000):
    """Estimate V[a,b,a,b] = E[w_d(x-y)] with x ~ |phi_a|^2, y ~ |phi_b|^2; returns (mean, stderr)."""
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = sample_mode_density(mode_a, m, rng)
        y = sample_mode_density(mode_b, m, rng)
        vals = kernel(d, np.linalg.norm(x - y, axis=1))
        total += vals.sum()
        total_sq += (vals * vals).sum()
        done += m
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


# ---------------------------------------------------------------------------
# cache container


def _payload(entries: np.ndarray) -> bytes:
    return np.ascontiguousarray(entries, dtype="<f8").tobytes(order="C")


def _payload_checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def cache_filename(d: int, M: int, quad: QuadratureSpec) -> str:
    return f"table_d{d}_M{M}_{quad.fingerprint()}.bin"


def cache_table(table: InteractionTable, path) -> Path:
    """Write header + little-endian float64 row-major tensor. Atomic via rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload(table.entries)
    header = {
        "format_version": FORMAT_VERSION,
        "d": table.d,
        "M": table.M,
        "kind": table.kind,
        "quad_fingerprint": table.quad_fingerprint,
        "checksum": _payload_checksum(payload),
        "dtype": "<f8",
        "shape": list(table.entries.shape),
        "raw_asymmetry": table.raw_asymmetry,
        "convergence_delta": table.convergence_delta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
    tmp.replace(path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise CacheVersionError(f"{path} is not an interaction-table cache file")
        (length,) = struct.unpack("<I", fh.read(4))
        try:
            return json.loads(fh.read(length).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ChecksumError(f"corrupted header in {path}") from exc


def load_table(path, d: int | None = None, M: int | None = None, quad_fingerprint: str | None = None) -> InteractionTable:
    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CacheVersionError(f"format version {header.get('format_version')} != {FORMAT_VERSION}")
    expected = {"d": d, "M": M, "quad_fingerprint": quad_fingerprint}
    for key, want in expected.items():
        if want is not None and header.get(key) != want:
            raise CacheVersionError(f"cache metadata {key}={header.get(key)!r}, expected {want!r}")
    with open(path, "rb") as fh:
        fh.seek(len(_MAGIC))
        (length,) = struct.unpack("<I", fh.read(4))
        fh.seek(length, 1)
        payload = fh.read()
    if _payload_checksum(payload) != header["checksum"]:
        raise ChecksumError(f"checksum mismatch in {path}")
    entries = np.frombuffer(payload, dtype="<f8").reshape(header["shape"]).astype(float)
    return InteractionTable(
        d=header["d"],
        M=header["M"],
        kind=header["kind"],
        entries=entries,
        quad_fingerprint=header["quad_fingerprint"],
        raw_asymmetry=header.get("raw_asymmetry", 0.0),
        convergence_delta=header.get("convergence_delta", 0.0),
    )
