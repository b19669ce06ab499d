"""
Diagonal-block matrices and their block projective representatives.

A diagonal-block matrix ``A`` of shape ``(n*k, m*k)`` is made of ``n x m``
sub-blocks, each equal to ``a_ij * I_k``. Its projective matrix is the
``n x m`` array of the scalars ``a_ij``. Products and inverses of
diagonal-block matrices stay diagonal-block, and their projective matrices
obey the ordinary algebra of the small ``n x m`` arrays::

    proj(A @ B) == proj(A) @ proj(B)
    proj(inv(A)) == inv(proj(A))

The fast path only ever touches ``ProjectiveMatrix``; ``lift`` and
``project`` exist to check it against the dense form.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotDiagonalBlock, SingularMatrix

STRUCTURE_ATOL = 1e-12
SINGULAR_RCOND = 1e-14


@dataclass(frozen=True, eq=False)
class ProjectiveMatrix:
    """Compact ``n x m`` representative of an ``nk x mk`` diagonal-block matrix."""

    entries: np.ndarray
    block_size: int = 1

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, copy=True)
        if entries.ndim != 2:
            raise DimensionMismatch(f"entries must be 2-D, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("projective entries must be finite")
        if int(self.block_size) < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "block_size", int(self.block_size))

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    @property
    def T(self):
        return ProjectiveMatrix(self.entries.T, self.block_size)

    def __eq__(self, other):
        if not isinstance(other, ProjectiveMatrix):
            return NotImplemented
        return (self.block_size == other.block_size
                and self.entries.shape == other.entries.shape
                and bool(np.array_equal(self.entries, other.entries)))

    def __repr__(self):
        return f"ProjectiveMatrix(shape={self.shape}, block_size={self.block_size})"


def lift(p):
    """Materialise the dense ``(n*k, m*k)`` diagonal-block matrix."""
    return np.kron(p.entries, np.eye(p.block_size))


def project(d, block_size, atol=STRUCTURE_ATOL):
    """Recover the projective matrix of a dense diagonal-block matrix.

    ``atol`` defaults to 1e-12, meant for exact constructions such as
    ``lift``; computed dense results (an LAPACK inverse, say) carry roundoff
    in the off-structure entries and need a tolerance scaled to their size.

    Raises
    ------
    NotDiagonalBlock
        If the dimensions are not multiples of ``block_size`` or any
        sub-block deviates from ``a * I`` by more than ``atol``.
    """
    d = np.asarray(d, dtype=float)
    k = int(block_size)
    if d.ndim != 2 or k < 1:
        raise NotDiagonalBlock(f"cannot project array of shape {d.shape} with block size {k}")
    nk, mk = d.shape
    if nk % k or mk % k:
        raise NotDiagonalBlock(f"shape {d.shape} is not divisible by block size {k}")
    n, m = nk // k, mk // k
    blocks = d.reshape(n, k, m, k).transpose(0, 2, 1, 3)
    values = blocks[:, :, 0, 0]
    expected = values[:, :, None, None] * np.eye(k)
    if blocks.size and np.max(np.abs(blocks - expected)) > atol:
        raise NotDiagonalBlock("a sub-block is not a constant multiple of the identity")
    return ProjectiveMatrix(values.copy(), k)


def _check_same_block(a, b):
    if a.block_size != b.block_size:
        raise DimensionMismatch(
            f"block sizes differ: {a.block_size} vs {b.block_size}")


def pm_multiply(a, b):
    """Projective matrix of ``lift(a) @ lift(b)``."""
    _check_same_block(a, b)
    if a.cols != b.rows:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return ProjectiveMatrix(a.entries @ b.entries, a.block_size)


def pm_inverse(a):
    """Projective matrix of ``inv(lift(a))``."""
    if a.rows != a.cols:
        raise DimensionMismatch(f"inverse needs a square matrix, got {a.shape}")
    if a.rows == 0:
        return ProjectiveMatrix(np.zeros((0, 0)), a.block_size)
    cond = np.linalg.cond(a.entries)
    if not np.isfinite(cond) or 1.0 / cond < SINGULAR_RCOND:
        raise SingularMatrix(f"projective matrix is singular (condition number {cond:.3g})")
    return ProjectiveMatrix(np.linalg.inv(a.entries), a.block_size)


def pm_trace(a):
    """Trace of ``lift(a)``, i.e. ``block_size * trace(a.entries)``."""
    if a.rows != a.cols:
        raise DimensionMismatch(f"trace needs a square matrix, got {a.shape}")
    return a.block_size * float(np.trace(a.entries))
