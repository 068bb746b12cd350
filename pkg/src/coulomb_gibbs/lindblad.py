"""Detailed-balanced Lindblad generators for truncated Hamiltonians.

Superoperators act on row-major vectorised matrices, vec(A X B) = (A kron B^T) vec(X).
Everything is assembled in the Hamiltonian eigenbasis, where the Bohr-frequency weights are
entrywise factors, and optionally rotated back to the product basis.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .guards import NumericalQualityError, check_superoperator_size
from .hamiltonian import HamiltonianBlock, cluster_eigenvalues, gibbs_state
from .oscillator import ProductBasis, ladder_matrix

EXP_OVERFLOW_GUARD = 700.0


@dataclass(frozen=True)
class FilterSpec:
    """Gaussian-KMS filter f(nu) = exp(-beta nu/4 - nu^2/(8 sigma_w^2)) and transition width sigma_E."""

    beta: float
    sigma_E: float = math.inf
    sigma_w: float | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.sigma_E > 0:
            raise ValueError(f"sigma_E must be > 0, got {self.sigma_E}")
        if self.sigma_w is not None and not self.sigma_w > 0:
            raise ValueError(f"sigma_w must be > 0, got {self.sigma_w}")

    @property
    def width(self) -> float:
        if self.sigma_w is not None:
            return float(self.sigma_w)
        return float(self.sigma_E) if math.isfinite(self.sigma_E) else 1.0

    @property
    def variant(self) -> str:
        return "sigmaE-finite" if math.isfinite(self.sigma_E) else "sigmaE-infinite"


def filter_hat(spec: FilterSpec, nu):
    nu = np.asarray(nu, dtype=float)
    return np.exp(-spec.beta * nu / 4.0 - nu * nu / (8.0 * spec.width**2))


def g_hat(spec: FilterSpec, nu):
    if not math.isfinite(spec.sigma_E):
        raise ValueError("g_hat needs a finite sigma_E")
    return _transition_weight(spec, nu)


def _transition_weight(spec: FilterSpec, nu):
    """e^{-nu^2/(8 sigma_E^2)} / (1 + e^{beta nu/2}); the Gaussian factor is 1 when sigma_E is infinite."""
    nu = np.asarray(nu, dtype=float)
    logistic = expit(-spec.beta * nu / 2.0)  # (1 - tanh(beta nu / 4)) / 2 without cancellation
    if math.isfinite(spec.sigma_E):
        return np.exp(-nu * nu / (8.0 * spec.sigma_E**2)) * logistic
    return logistic


def _damping(spec: FilterSpec, nu):
    nu = np.asarray(nu, dtype=float)
    if math.isfinite(spec.sigma_E):
        return np.exp(-nu * nu / (8.0 * spec.sigma_E**2))
    return np.ones_like(nu)


@dataclass(frozen=True)
class Jump:
    particle: int
    axis: int
    kind: str
    matrix: np.ndarray = field(repr=False)

    @property
    def label(self) -> tuple:
        return (self.particle, self.axis, self.kind)


def build_jump_set(basis: ProductBasis) -> list[Jump]:
    """Truncated a_{ij} and a_{ij}^dagger for every particle i and axis j, lower before raise."""
    jumps = []
    for i in range(basis.n):
        for j in range(basis.d):
            a = ladder_matrix(basis, i, j, "lower")
            jumps.append(Jump(i, j, "lower", a))
            jumps.append(Jump(i, j, "raise", a.conj().T.copy()))
    return jumps


@dataclass(frozen=True)
class EnergyFrame:
    energies: np.ndarray  # clustered eigenvalues
    vectors: np.ndarray

    @property
    def bohr(self) -> np.ndarray:
        """nu[e, f] = E_e - E_f."""
        return self.energies[:, None] - self.energies[None, :]

    def to_energy(self, A: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ A @ self.vectors

    def to_product(self, A: np.ndarray) -> np.ndarray:
        return self.vectors @ A @ self.vectors.conj().T


def energy_frame(block: HamiltonianBlock) -> EnergyFrame:
    return EnergyFrame(cluster_eigenvalues(block.eigenvalues), block.eigenvectors)


def _as_matrix(A) -> np.ndarray:
    return A.matrix if isinstance(A, Jump) else np.asarray(A)


def filtered_jump(block: HamiltonianBlock, A, spec: FilterSpec, s: float = 0.0) -> np.ndarray:
    """sum_{E,E'} e^{s(E-E')} f(E-E') P_E A P_E' in the product basis."""
    frame = energy_frame(block)
    nu = frame.bohr
    weight = filter_hat(spec, nu)
    if s != 0.0:
        weight = weight * np.exp(s * nu)
    return frame.to_product(weight * frame.to_energy(_as_matrix(A)))


def _energy_jumps(frame: EnergyFrame, jumps, spec: FilterSpec) -> np.ndarray:
    weight = filter_hat(spec, frame.bohr)
    return np.stack([weight * frame.to_energy(_as_matrix(A)) for A in jumps])


def coherent_term(block: HamiltonianBlock, jumps, spec: FilterSpec) -> np.ndarray:
    """B = (i/2) sum_alpha sum_{E,F} tanh(beta(F-E)/4) P_F L^dag L P_E."""
    frame = energy_frame(block)
    L = _energy_jumps(frame, jumps, spec)
    LL = np.einsum("aki,akj->ij", L.conj(), L)
    B = 0.5j * np.tanh(spec.beta * frame.bohr / 4.0) * LL
    B = frame.to_product(B)
    return 0.5 * (B + B.conj().T)


@dataclass
class GeneratorMatrix:
    matrix: np.ndarray = field(repr=False)
    variant: str
    picture: str
    basis: str  # "product", "energy" or "fock" (reference generators)
    dim: int
    frame: EnergyFrame | None = field(default=None, repr=False)
    beta: float | None = None
    hermiticity_residual: float = 0.0
    provenance: str = ""

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(X).reshape(-1)).reshape(self.dim, self.dim)

    def to_basis_of(self, X: np.ndarray) -> np.ndarray:
        """Express a product-basis operator in the basis this generator acts on."""
        if self.basis == "energy":
            return self.frame.to_energy(X)
        return np.asarray(X)

    def from_basis(self, X: np.ndarray) -> np.ndarray:
        if self.basis == "energy":
            return self.frame.to_product(X)
        return np.asarray(X)


def _check_size(dim: int, override: bool) -> None:
    check_superoperator_size(dim, override)


def _add_left(S4: np.ndarray, A: np.ndarray) -> None:
    """S += A kron I, in the 4-index view S4[e, e', f, f']."""
    for k in range(S4.shape[1]):
        S4[:, k, :, k] += A


def _add_right(S4: np.ndarray, A: np.ndarray) -> None:
    """S += I kron A^T, i.e. the superoperator X -> X A."""
    for k in range(S4.shape[0]):
        S4[k, :, k, :] += A.T


def _gain(L: np.ndarray) -> np.ndarray:
    """sum_alpha L kron conj(L) as a 4-index tensor [e, e', f, f']."""
    D = L.shape[1]
    out = np.zeros((D, D, D, D), dtype=complex)
    for La in L:
        out += La[:, None, :, None] * La.conj()[None, :, None, :]
    return out


def _rotate_to_product(S4: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Conjugate a 4-index superoperator by U = V kron conj(V)."""
    Vc = V.conj()
    out = np.tensordot(V, S4, axes=(1, 0))  # [a, e', f, f']
    out = np.tensordot(Vc, out, axes=(1, 1)).transpose(1, 0, 2, 3)  # [a, b, f, f']
    out = np.tensordot(out, Vc, axes=(2, 1))  # [a, b, f', c]
    out = np.tensordot(out, V, axes=(2, 1))  # [a, b, c, g]
    return out


def _provenance(block: HamiltonianBlock, spec: FilterSpec, jumps, picture: str) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(block.matrix).tobytes())
    h.update(repr((spec.beta, spec.sigma_E, spec.width, picture)).encode())
    for A in jumps:
        h.update(np.ascontiguousarray(_as_matrix(A)).tobytes())
    return h.hexdigest()[:16]


def _finish(S4, frame, basis, dim, **kw) -> GeneratorMatrix:
    if basis == "product":
        S4 = _rotate_to_product(S4, frame.vectors)
    elif basis != "energy":
        raise ValueError(f"basis must be 'product' or 'energy', got {basis!r}")
    return GeneratorMatrix(matrix=S4.reshape(dim * dim, dim * dim), basis=basis, dim=dim, frame=frame, **kw)


def _trace_class_energy(frame: EnergyFrame, L: np.ndarray, spec: FilterSpec) -> np.ndarray:
    nu = frame.bohr
    D = nu.shape[0]
    LL = np.einsum("aki,akj->ij", L.conj(), L)
    G = -_transition_weight(spec, nu) * LL
    S4 = _gain(L)
    if math.isfinite(spec.sigma_E):
        # Phi carries exp(-((E-F) - (E'-F'))^2 / (8 sigma_E^2)) on |E><E'| <- |F><F'|
        diff = nu[:, None, :, None] - nu[None, :, None, :]
        S4 *= np.exp(-diff * diff / (8.0 * spec.sigma_E**2))
        del diff
    _add_left(S4, G)
    _add_right(S4, G.conj().T)
    assert S4.shape == (D, D, D, D)
    return S4


def build_generator_trace_class(
    block: HamiltonianBlock, jumps, spec: FilterSpec, basis: str = "product", guard_override: bool = False
) -> GeneratorMatrix:
    """rho -> G rho + rho G^dag + Phi(rho), detailed balanced with respect to the block Gibbs state."""
    dim = block.dim
    _check_size(dim, guard_override)
    frame = energy_frame(block)
    L = _energy_jumps(frame, jumps, spec)
    S4 = _trace_class_energy(frame, L, spec)
    return _finish(
        S4,
        frame,
        basis,
        dim,
        variant=spec.variant,
        picture="trace-class",
        beta=spec.beta,
        provenance=_provenance(block, spec, jumps, "trace-class"),
    )


def build_generator_symmetrized(
    block: HamiltonianBlock,
    jumps,
    spec: FilterSpec,
    variant: str | None = None,
    basis: str = "product",
    guard_override: bool = False,
) -> GeneratorMatrix:
    """Self-adjoint generator sigma^{-1/4} L(sigma^{1/4} . sigma^{1/4}) sigma^{-1/4}.

    With sigma_E infinite it is assembled directly:
        X -> -i(B+ X - X B-) + sum_alpha (L+ X L+^dag - K+ X / 2 - X K- / 2),
    where L+ = e^{beta H/4} L e^{-beta H/4}, K+- and B+- are the same conjugations of L^dag L and B.
    With sigma_E finite the trace-class generator is conjugated entrywise in the eigenbasis.
    """
    variant = variant or spec.variant
    if variant != spec.variant:
        raise ValueError(f"variant {variant!r} does not match the filter ({spec.variant})")
    dim = block.dim
    _check_size(dim, guard_override)
    frame = energy_frame(block)
    nu = frame.bohr
    beta = spec.beta
    L = _energy_jumps(frame, jumps, spec)
    E = frame.energies - frame.energies.min()
    if variant == "sigmaE-infinite":
        up = np.exp(beta * nu / 4.0)
        down = np.exp(-beta * nu / 4.0)
        L_plus = L * up[None]
        LL = np.einsum("aki,akj->ij", L.conj(), L)
        B = 0.5j * np.tanh(beta * nu / 4.0) * LL
        S4 = _gain(L_plus)
        _add_left(S4, -1j * (up * B) - 0.5 * (up * LL))
        _add_right(S4, 1j * (down * B) - 0.5 * (down * LL))
    else:
        if beta * float(E.max()) > EXP_OVERFLOW_GUARD:
            raise NumericalQualityError(
                f"beta times the spectral range ({beta * E.max():.1f}) overflows the sigma^(1/4) conjugation"
            )
        S4 = _trace_class_energy(frame, L, spec)
        left = np.exp(beta * (E[:, None] + E[None, :]) / 4.0)
        S4 *= left[:, :, None, None]
        S4 /= left[None, None, :, :]
    S = S4.reshape(dim * dim, dim * dim)
    scale = max(float(np.abs(S).max()), 1e-300)
    residual = float(np.abs(S - S.conj().T).max()) / scale
    S = 0.5 * (S + S.conj().T)
    return _finish(
        S.reshape(dim, dim, dim, dim),
        frame,
        basis,
        dim,
        variant=variant,
        picture="symmetrized",
        beta=beta,
        hermiticity_residual=residual,
        provenance=_provenance(block, spec, jumps, "symmetrized"),
    )


def sampler_fixed_point(block: HamiltonianBlock, beta: float) -> np.ndarray:
    """Block-normalised Gibbs state, the stationary state of the truncated sampler."""
    return gibbs_state(block, beta).block_state()


def iota(sigma_quarter: np.ndarray, X: np.ndarray) -> np.ndarray:
    """iota_2(X) = sigma^{1/4} X sigma^{1/4}."""
    return sigma_quarter @ X @ sigma_quarter


# ---------------------------------------------------------------------------
# single-mode reference generators (Fock basis |n><m|)


def ou_rates(beta: float, sigma_w: float = 1.0) -> tuple[float, float]:
    """(nu_plus, nu_minus) = (|f(2)|^2, |f(-2)|^2)."""
    spec = FilterSpec(beta=beta, sigma_w=sigma_w)
    return float(filter_hat(spec, 2.0) ** 2), float(filter_hat(spec, -2.0) ** 2)


def _fock_ladder(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1)


def ou_reference_generator(nu_plus: float, nu_minus: float, cutoff: int) -> GeneratorMatrix:
    """Symmetrised single-mode OU generator on cutoff Fock levels.

    x -> -(nu_-/2){N, x} - (nu_+/2){a a^dag, x} + sqrt(nu_+ nu_-)(a x a^dag + a^dag x a),
    with a a^dag the truncated product (equal to N + 1 except on the top level).
    """
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    a = _fock_ladder(cutoff)
    N = a.T @ a
    aad = a @ a.T
    eye = np.eye(cutoff)
    K = lambda A, B: np.kron(A, B.T)  # noqa: E731 - X -> A X B
    S = (
        -0.5 * nu_minus * (K(N, eye) + K(eye, N))
        - 0.5 * nu_plus * (K(aad, eye) + K(eye, aad))
        + math.sqrt(nu_plus * nu_minus) * (K(a, a.T) + K(a.T, a))
    )
    return GeneratorMatrix(matrix=S.astype(complex), variant="ou", picture="symmetrized", basis="fock", dim=cutoff)


def ladder_block_generator(nu_plus: float, nu_minus: float, cutoff: int) -> GeneratorMatrix:
    """Diagonal on |n><m| with eigenvalue kappa_{n+m}, kappa_k = (nu_+ - nu_-)^2 k / 2 - nu_+(nu_- - nu_+)."""
    k = np.add.outer(np.arange(cutoff), np.arange(cutoff)).ravel()
    kappa = 0.5 * (nu_plus - nu_minus) ** 2 * k - nu_plus * (nu_minus - nu_plus)
    return GeneratorMatrix(matrix=np.diag(kappa).astype(complex), variant="ladder-block", picture="symmetrized", basis="fock", dim=cutoff)


def ladder_block_form_margin(nu_plus: float, nu_minus: float, cutoff: int) -> float:
    """Smallest eigenvalue of -L_OU(nu) - L_LB(sqrt nu): the comparison that holds as a form inequality.

    The ladder block is evaluated at the filter amplitudes |f(+-2)| = sqrt(nu_+-) and compared
    with the positive operator -L_OU.
    """
    ou = ou_reference_generator(nu_plus, nu_minus, cutoff).matrix
    lb = ladder_block_generator(math.sqrt(nu_plus), math.sqrt(nu_minus), cutoff).matrix
    D = -ou - lb
    return float(np.linalg.eigvalsh(0.5 * (D + D.conj().T)).min())


__all__ = [
    "FilterSpec",
    "Jump",
    "EnergyFrame",
    "GeneratorMatrix",
    "filter_hat",
    "g_hat",
    "build_jump_set",
    "energy_frame",
    "filtered_jump",
    "coherent_term",
    "build_generator_trace_class",
    "build_generator_symmetrized",
    "sampler_fixed_point",
    "iota",
    "ou_rates",
    "ou_reference_generator",
    "ladder_block_generator",
    "ladder_block_form_margin",
]
