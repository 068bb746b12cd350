"""Desk-scale size limits and the error types that map to CLI exit codes."""

from __future__ import annotations

from contextlib import contextmanager

HILBERT_DIM_GUARD = 1500
# dense superoperator entries (dim^2 x dim^2); 2.5e7 complex entries is about 400 MB
SUPEROPERATOR_ENTRY_GUARD = 25_000_000

_relaxed = False


class DimensionGuardError(RuntimeError):
    """A requested object exceeds the desk-scale size limits."""


class NumericalQualityError(RuntimeError):
    """A numerical result failed its internal accuracy or consistency check."""


@contextmanager
def relaxed_guards():
    """Disable both size limits inside the block (the CLI's --guard-override)."""
    global _relaxed
    prev, _relaxed = _relaxed, True
    try:
        yield
    finally:
        _relaxed = prev


def guards_relaxed() -> bool:
    return _relaxed


def check_hilbert_dim(dim: int, limit: int | None = None, what: str = "Hilbert dimension") -> None:
    limit = HILBERT_DIM_GUARD if limit is None else limit
    if dim > limit and not _relaxed:
        raise DimensionGuardError(f"{what} {dim} exceeds the desk-scale guard {limit}")


def check_superoperator_size(hilbert_dim: int, override: bool = False) -> None:
    entries = hilbert_dim**4
    if entries > SUPEROPERATOR_ENTRY_GUARD and not (override or _relaxed):
        raise DimensionGuardError(
            f"superoperator on a {hilbert_dim}-dimensional space has {entries:.2e} entries "
            f"(guard {SUPEROPERATOR_ENTRY_GUARD:.1e}); pass the guard override to proceed"
        )
