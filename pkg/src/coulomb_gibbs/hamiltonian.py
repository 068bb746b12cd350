"""Truncated many-body Hamiltonians, exact Gibbs states with the free tail, and reference constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .coulomb import CouplingMatrix, QuadratureSpec, assemble_interaction, interaction_table
from .oscillator import ProductBasis, product_basis

CLUSTER_RTOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    n: int
    d: int
    M: int
    couplings: CouplingMatrix
    beta: float
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.couplings.n != self.n:
            raise ValueError(f"couplings are for n={self.couplings.n}, model has n={self.n}")


def log_two_sinh(beta: float) -> float:
    """log(2 sinh beta), stable for large beta."""
    return beta + math.log1p(-math.exp(-2.0 * beta))


def free_energy_free(n: int, d: int, beta: float) -> float:
    """F_beta(H_0) = dn log(2 sinh beta) / beta."""
    return d * n * log_two_sinh(beta) / beta


def one_body_free_energy(d: int, beta: float) -> float:
    return free_energy_free(1, d, beta)


def cluster_eigenvalues(values: np.ndarray, rtol: float = CLUSTER_RTOL) -> np.ndarray:
    """Replace runs of (sorted) eigenvalues closer than rtol * scale by their mean."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.copy()
    order = np.argsort(values)
    v = values[order]
    tol = rtol * max(1.0, float(np.abs(v).max()))
    breaks = np.flatnonzero(np.diff(v) > tol) + 1
    out = np.empty_like(v)
    for chunk in np.split(np.arange(v.size), breaks):
        out[chunk] = v[chunk].mean()
    result = np.empty_like(values)
    result[order] = out
    return result


@dataclass
class HamiltonianBlock:
    """H0 + s*W restricted to range(Pi_M); on the complement the Hamiltonian is free."""

    basis: ProductBasis
    h0_diag: np.ndarray
    interaction: np.ndarray
    s: float = 1.0
    eigenvalues: np.ndarray = field(init=False, repr=False)
    eigenvectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = self.matrix
        vals, vecs = np.linalg.eigh(H)
        self.eigenvalues = vals
        self.eigenvectors = vecs

    @property
    def matrix(self) -> np.ndarray:
        H = self.s * self.interaction + np.diag(self.h0_diag)
        return 0.5 * (H + H.conj().T)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def tail(self) -> dict:
        return {"n": self.basis.n, "d": self.basis.d, "M": self.basis.M}

    @property
    def clustered_eigenvalues(self) -> np.ndarray:
        return cluster_eigenvalues(self.eigenvalues)

    @property
    def interaction_norm(self) -> float:
        return abs(self.s) * float(np.linalg.norm(self.interaction, 2)) if self.interaction.any() else 0.0

    def with_scale(self, s: float) -> "HamiltonianBlock":
        return HamiltonianBlock(self.basis, self.h0_diag, self.interaction, s)

    @classmethod
    def from_matrix(cls, basis: ProductBasis, H: np.ndarray) -> "HamiltonianBlock":
        """Wrap an arbitrary Hermitian block; everything beyond the free diagonal counts as interaction."""
        h0 = basis.energies()
        return cls(basis, h0, np.asarray(H) - np.diag(h0), 1.0)


def build_H0(basis: ProductBasis) -> np.ndarray:
    return np.diag(basis.energies())


def interaction_matrix(params: ModelParams, cache_dir=None) -> np.ndarray:
    basis = product_basis(params.n, params.d, params.M)
    if params.n < 2 or not np.any(params.couplings.alpha):
        return np.zeros((basis.dim, basis.dim))
    table = interaction_table(params.d, params.M, params.quad, cache_dir=cache_dir)
    return assemble_interaction(basis, table, params.couplings)


def build_truncated_hamiltonian(params: ModelParams, cache_dir=None) -> HamiltonianBlock:
    basis = product_basis(params.n, params.d, params.M)
    return HamiltonianBlock(basis, basis.energies(), interaction_matrix(params, cache_dir), 1.0)


def interpolate(params: ModelParams, s: float, cache_dir=None) -> HamiltonianBlock:
    """H(s) = (1-s) H0 + s H_{n,M} = H0 + s W_{n,M}."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter must lie in [0, 1], got {s}")
    return build_truncated_hamiltonian(params, cache_dir).with_scale(s)


@dataclass
class GibbsState:
    beta: float
    energies: np.ndarray
    populations: np.ndarray  # e^{-beta E_k}/Z with the full (block + tail) Z
    log_Z: float
    tail_weight: float
    eigenvectors: np.ndarray = field(repr=False)

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    @property
    def free_energy(self) -> float:
        return -self.log_Z / self.beta

    @property
    def block_trace(self) -> float:
        return float(self.populations.sum())

    @property
    def density_matrix(self) -> np.ndarray:
        """Sub-normalised block of sigma_beta on range(Pi_M) (trace = 1 - tail_weight)."""
        V = self.eigenvectors
        return (V * self.populations) @ V.conj().T

    @property
    def block_populations(self) -> np.ndarray:
        """Populations of the block-normalised state, the fixed point of the truncated sampler."""
        return self.populations / self.populations.sum()

    def block_state(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.block_populations) @ V.conj().T

    def block_power(self, power: float) -> np.ndarray:
        """(block-normalised sigma)^power."""
        V = self.eigenvectors
        return (V * self.block_populations**power) @ V.conj().T

    def expectation(self, X: np.ndarray) -> float:
        """Tr(sigma X) for an operator X supported on the block."""
        V = self.eigenvectors
        diag = np.einsum("ik,ij,jk->k", V.conj(), X, V).real
        return float(diag @ self.populations)


def _log_free_partition(n: int, d: int, beta: float) -> float:
    return -d * n * log_two_sinh(beta)


def gibbs_state(block: HamiltonianBlock, beta: float) -> GibbsState:
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    E = block.eigenvalues
    n, d = block.basis.n, block.basis.d
    # shift so that every exponent is <= 0; the tail is free and starts above dn
    c = min(float(E.min()), float(d * n))
    block_w = np.exp(-beta * (E - c))
    tail = free_tail_weight(block.basis, beta, shift=c)
    total = float(block_w.sum()) + tail
    return GibbsState(
        beta=beta,
        energies=E,
        populations=block_w / total,
        log_Z=-beta * c + math.log(total),
        tail_weight=tail / total,
        eigenvectors=block.eigenvectors,
    )


def free_tail_weight(basis: ProductBasis, beta: float, shift: float = 0.0) -> float:
    """Sum of e^{-beta (E0 - shift)} over product states outside the retained block.

    With q = e^{-2 beta}, R the retained one-body sum and F = (1-q)^{-d} the full one, the
    tail is e^{-beta(dn - shift)} (F^n - R^n) = e^{-beta(dn - shift)} (F - R) sum_k F^k R^{n-1-k}.
    F - R is summed mode by mode when it is small, to avoid cancellation.
    """
    n, d = basis.n, basis.d
    q = math.exp(-2.0 * beta)
    levels = basis.one_body.modes.sum(axis=1)
    retained = float(np.sum(q**levels))
    full = (1.0 - q) ** (-d)
    outside = full - retained
    if outside < 1e-3 * full:
        top = int(levels.max())
        outside = (math.comb(top + d - 1, d - 1) - int(np.sum(levels == top))) * q**top
        level = top + 1
        while True:
            term = math.comb(level + d - 1, d - 1) * q**level
            outside += term
            if term < 1e-18 * outside:
                break
            level += 1
    tail = outside * sum(full**k * retained ** (n - 1 - k) for k in range(n))
    return tail * math.exp(-beta * (d * n - shift))


def partition_sandwich(block: HamiltonianBlock, beta: float) -> tuple[float, float, float]:
    """(lower, Z, upper) with e^{-+beta ||W||} (2 sinh beta)^{-dn} around Z, in log form."""
    g = gibbs_state(block, beta)
    w = block.interaction_norm
    logZ0 = _log_free_partition(block.basis.n, block.basis.d, beta)
    return logZ0 - beta * w, g.log_Z, logZ0 + beta * w


@dataclass(frozen=True)
class MagneticQuadratic:
    Mmat: np.ndarray
    B: float

    def __post_init__(self):
        M = np.asarray(self.Mmat, dtype=float)
        if M.shape != (2, 2) or not np.allclose(M, M.T, atol=1e-14):
            raise ValueError("Mmat must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise ValueError("Mmat must be positive definite")
        object.__setattr__(self, "Mmat", M)


def omega_matrix(mq: MagneticQuadratic) -> np.ndarray:
    """Hamiltonian-flow matrix of (p - A(x))^2 + <x, M x> with A = (B/2)(-x2, x1).

    Phase-space order (x1, x2, p1, p2); the linear flow is d/dt z = Omega z up to a factor 2
    that is dropped so that the eigenvalues are +-i sigma_k.
    """
    M = mq.Mmat
    B = mq.B
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    A = 0.5 * B * J  # A(x) = A @ x
    # H = |p - A x|^2 + x^T M x; Hessian blocks with respect to (x, p)
    Hxx = 2.0 * (A.T @ A + M)
    Hxp = -2.0 * A.T
    Hpp = 2.0 * np.eye(2)
    hess = np.block([[Hxx, Hxp], [Hxp.T, Hpp]])
    sympl = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    return 0.5 * sympl @ hess


def symplectic_frequencies(mq: MagneticQuadratic):
    """(sigma_1, sigma_2, eig(Omega)) with sigma_1 >= sigma_2 > 0.

    sigma^2 solves lambda^2 - (Tr M + B^2) lambda + det M = 0 in lambda = sigma^2.
    """
    tr = float(np.trace(mq.Mmat)) + mq.B**2
    det = float(np.linalg.det(mq.Mmat))
    root = math.sqrt(max(tr * tr - 4.0 * det, 0.0))
    s1 = math.sqrt((tr + root) / 2.0)
    s2 = math.sqrt(det) / s1  # avoids cancellation in (tr - root)/2
    return s1, s2, np.linalg.eigvals(omega_matrix(mq))


def _ein(x: float) -> float:
    """Entire exponential integral Ein(x) = int_0^x (1 - e^-t)/t dt."""
    if x < 1.0:
        # series: sum_{k>=1} (-1)^{k+1} x^k / (k k!)
        total, term, k = 0.0, 1.0, 1
        while True:
            term *= x / k
            add = (-1) ** (k + 1) * term / k
            total += add
            if abs(add) < 1e-17 * max(abs(total), 1e-300):
                return total
            k += 1
    return float(special.exp1(x)) + math.log(x) + np.euler_gamma


def mehler_bound_constant(d: int, t: float) -> float:
    """E|w_d(r)| with r centred normal of per-component variance coth(t)."""
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    c = 1.0 / math.tanh(t)
    if d == 3:
        return math.sqrt(2.0 / (math.pi * c))
    if d == 2:
        # |r|^2/(2c) ~ Exp(1): E|log|r|| = 1/2 E|log(2c) + log X|, X ~ Exp(1); split at X = 1/(2c)
        a = 1.0 / (2.0 * c)
        return 0.5 * (math.log(2.0 * c) - np.euler_gamma + 2.0 * _ein(a))
    if d == 1:
        s = math.sqrt(c)

        def f(x):
            return abs(math.log(x)) * math.exp(-x * x / (2 * c)) * math.sqrt(2.0 / math.pi) / s

        parts = [integrate.quad(f, 0.0, 1.0, limit=200)[0], integrate.quad(f, 1.0, np.inf, limit=200)[0]]
        return sum(parts)
    raise ValueError(f"d must be 1, 2 or 3, got {d}")


def free_energy_upper_bound(n: int, d: int, beta: float, couplings: CouplingMatrix) -> float:
    """n F_beta(h) + B_n * I_{d,beta}."""
    return n * one_body_free_energy(d, beta) + couplings.B_n * mehler_bound_constant(d, beta)


def lower_bound_constant(block: HamiltonianBlock, beta: float, couplings: CouplingMatrix) -> float:
    """Empirical C with F_beta(H) >= n F_{beta/2}(h) - C A_n B_n."""
    n, d = block.basis.n, block.basis.d
    denom = couplings.A_n * couplings.B_n
    if denom == 0:
        return 0.0
    F = gibbs_state(block, beta).free_energy
    return (n * one_body_free_energy(d, beta / 2.0) - F) / denom


__all__ = [
    "ModelParams",
    "HamiltonianBlock",
    "GibbsState",
    "MagneticQuadratic",
    "build_H0",
    "build_truncated_hamiltonian",
    "interaction_matrix",
    "interpolate",
    "gibbs_state",
    "free_energy_free",
    "one_body_free_energy",
    "log_two_sinh",
    "cluster_eigenvalues",
    "partition_sandwich",
    "omega_matrix",
    "symplectic_frequencies",
    "mehler_bound_constant",
    "free_energy_upper_bound",
    "lower_bound_constant",
    "free_tail_weight",
]

