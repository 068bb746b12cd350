"""Harmonic-oscillator bases: one-body Hermite modes and n-particle product states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BasisError(ValueError):
    pass


def _multi_indices_at_level(d: int, level: int) -> list[tuple[int, ...]]:
    """All k in N^d with |k| = level, in lexicographic order."""
    if d == 1:
        return [(level,)]
    out = []
    for first in range(level + 1):
        for rest in _multi_indices_at_level(d - 1, level - first):
            out.append((first,) + rest)
    return out


@dataclass(frozen=True)
class OneBodyBasis:
    """First M Hermite modes in d dimensions, ordered by energy then lexicographically."""

    d: int
    M: int
    modes: np.ndarray = field(repr=False)  # (M, d) integer multi-indices

    @property
    def energies(self) -> np.ndarray:
        return 2.0 * self.modes.sum(axis=1) + self.d

    @property
    def max_level(self) -> int:
        return int(self.modes.sum(axis=1).max())

    def index_of(self, k) -> int:
        hits = np.flatnonzero((self.modes == np.asarray(k)).all(axis=1))
        return int(hits[0]) if hits.size else -1


def enumerate_one_body_basis(d: int, M: int) -> OneBodyBasis:
    if d not in (1, 2, 3):
        raise BasisError(f"dimension d must be 1, 2 or 3, got {d}")
    if M < 1:
        raise BasisError(f"cutoff M must be >= 1, got {M}")
    modes: list[tuple[int, ...]] = []
    level = 0
    while len(modes) < M:
        modes.extend(_multi_indices_at_level(d, level))
        level += 1
    arr = np.array(modes[:M], dtype=np.int64).reshape(M, d)
    arr.setflags(write=False)
    return OneBodyBasis(d=d, M=M, modes=arr)


@dataclass(frozen=True)
class ProductBasis:
    """Lexicographic product of n copies of a one-body basis (distinguishable particles)."""

    n: int
    one_body: OneBodyBasis

    @property
    def d(self) -> int:
        return self.one_body.d

    @property
    def M(self) -> int:
        return self.one_body.M

    @property
    def dim(self) -> int:
        return self.M ** self.n

    def states(self) -> np.ndarray:
        """(dim, n) array of one-body indices for each product state."""
        if self.n == 0:
            return np.zeros((1, 0), dtype=np.int64)
        grids = np.indices((self.M,) * self.n).reshape(self.n, -1).T
        return grids.astype(np.int64)

    def energies(self) -> np.ndarray:
        """Free energies 2|k_1|+...+2|k_n| + dn, one per product state."""
        e1 = self.one_body.energies
        total = np.zeros(self.dim)
        for slots in self.states().T:
            total += e1[slots]
        return total

    def index_of(self, slots) -> int:
        idx = 0
        for s in slots:
            idx = idx * self.M + int(s)
        return idx

    def embed_indices(self, larger: "ProductBasis") -> np.ndarray:
        """Indices of this basis' states inside a product basis with a larger cutoff."""
        if larger.n != self.n or larger.d != self.d or larger.M < self.M:
            raise BasisError("target basis must share n, d and have cutoff >= M")
        states = self.states()
        weights = larger.M ** np.arange(self.n - 1, -1, -1)
        return states @ weights


def product_basis(n: int, d: int, M: int, max_dim: int | None = None) -> ProductBasis:
    """n-fold product basis; dimensions above max_dim (default: the desk-scale guard) are refused."""
    from .guards import check_hilbert_dim

    if n < 1:
        raise BasisError(f"particle number n must be >= 1, got {n}")
    basis = ProductBasis(n=n, one_body=enumerate_one_body_basis(d, M))
    check_hilbert_dim(basis.dim, max_dim, what=f"Hilbert dimension M^n = {M}^{n} =")
    return basis


def one_body_ladder(one_body: OneBodyBasis, axis: int, kind: str = "lower") -> np.ndarray:
    """Truncated a_axis (or its adjoint) on the span of the one-body modes."""
    if not 0 <= axis < one_body.d:
        raise BasisError(f"axis {axis} out of range for d={one_body.d}")
    M = one_body.M
    a = np.zeros((M, M))
    for col, k in enumerate(one_body.modes):
        if k[axis] == 0:
            continue
        target = k.copy()
        target[axis] -= 1
        row = one_body.index_of(target)
        if row >= 0:
            a[row, col] = np.sqrt(k[axis])
    if kind == "lower":
        return a
    if kind == "raise":
        return a.T.copy()
    raise BasisError(f"kind must be 'lower' or 'raise', got {kind!r}")


def lift_one_body(op: np.ndarray, n: int, particle: int) -> np.ndarray:
    """I^{(particle)} (x) op (x) I^{(n-particle-1)}."""
    M = op.shape[0]
    left = np.eye(M ** particle)
    right = np.eye(M ** (n - particle - 1))
    return np.kron(np.kron(left, op), right)


def ladder_matrix(basis: ProductBasis, particle: int, axis: int, kind: str = "lower") -> np.ndarray:
    if not 0 <= particle < basis.n:
        raise BasisError(f"particle {particle} out of range for n={basis.n}")
    return lift_one_body(one_body_ladder(basis.one_body, axis, kind), basis.n, particle)


def hermite_functions(kmax: int, x) -> np.ndarray:
    """Normalised Hermite functions h_0..h_kmax at x; shape (kmax+1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if kmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(1, kmax):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * x * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def hermite_polynomial_factors(kmax: int, x) -> np.ndarray:
    """h_k(x) * exp(x^2/2): the polynomial part of each Hermite function."""
    x = np.asarray(x, dtype=float)
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = np.pi ** -0.25
    if kmax >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for k in range(1, kmax):
        out[k + 1] = np.sqrt(2.0 / (k + 1)) * x * out[k] - np.sqrt(k / (k + 1)) * out[k - 1]
    return out


def hermite_function(k, x) -> np.ndarray:
    """Product Hermite function phi_k(x) for a multi-index k; x has trailing axis d."""
    k = np.atleast_1d(np.asarray(k, dtype=int))
    x = np.asarray(x, dtype=float)
    if k.size == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != k.size:
        raise BasisError(f"points have trailing axis {x.shape[-1]}, expected {k.size}")
    vals = np.ones(x.shape[:-1])
    for axis, kj in enumerate(k):
        vals = vals * hermite_functions(int(kj), x[..., axis])[kj]
    return vals


def multi_indices(basis: ProductBasis) -> list[tuple[tuple[int, ...], ...]]:
    modes = basis.one_body.modes
    return [tuple(tuple(int(v) for v in modes[s]) for s in row) for row in basis.states()]


__all__ = [
    "BasisError",
    "OneBodyBasis",
    "ProductBasis",
    "enumerate_one_body_basis",
    "product_basis",
    "one_body_ladder",
    "lift_one_body",
    "ladder_matrix",
    "hermite_functions",
    "hermite_polynomial_factors",
    "hermite_function",
    "multi_indices",
]
