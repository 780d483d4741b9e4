"""Orthogonalization by dimensional lifting.

Vectors from C^n are embedded into C^(n+m) with extra coordinates chosen so
that the embedded set is pairwise orthogonal with a common norm r, while
dropping the extra coordinates recovers the originals.  Linear independence
of the inputs is not required; the price is the added dimensions.

Two constructions are provided:

* ``lift_batch`` — whole set at once, extra coordinates from the symmetric
  PSD square root of ``I - A^H A`` with ``A = M / r``.
* ``lift_append`` — one vector at a time through a column-incremental
  Cholesky factor of ``r^2 I - G`` (G the Gram matrix of the inputs).  The
  factor is upper triangular with positive diagonal, so every emitted block
  is supported on a prefix of the lifted coordinates and earlier blocks
  never change as the set grows.

Classic Gram-Schmidt and the small matrix utilities used by both live here
too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    CapacityExceeded,
    DimensionMismatch,
    LinearDependence,
    NotOrthonormal,
    NotPSD,
    PivotFailure,
    RadiusTooSmall,
)

#: Residual/pivot floor below which a direction counts as degenerate.
PIVOT_TOL = 1e-12
#: Tolerance for orthogonality and unitarity residual checks.
ORTHO_TOL = 1e-9
#: Eigenvalues above this negative floor are treated as floating-point noise.
NEG_EIG_TOL = -1e-12


def as_state(vec, dim: int | None = None) -> np.ndarray:
    """Coerce ``vec`` to a fresh 1-D complex128 array with finite entries.

    Raises DimensionMismatch if ``dim`` is given and does not match, and
    ValueError on NaN/Inf entries.
    """
    arr = np.array(vec, dtype=np.complex128)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state vector contains NaN or Inf entries")
    return arr


def _as_matrix(mat) -> np.ndarray:
    arr = np.array(mat, dtype=np.complex128)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix contains NaN or Inf entries")
    return arr


@dataclass(frozen=True)
class LiftingParams:
    """Geometry of one lifting instance.

    n      -- base dimension of the input vectors.
    m_max  -- number of lifted dimensions, a power of two (bounds how many
              vectors can ever be appended).
    r      -- common norm of the lifted blocks; each operation checks the
              radius against its own inputs.
    """

    n: int
    m_max: int
    r: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"base dimension must be >= 1, got {self.n}")
        if self.m_max < 2 or self.m_max & (self.m_max - 1):
            raise ValueError(f"m_max must be a power of two >= 2, got {self.m_max}")
        if not (math.isfinite(self.r) and self.r > 0):
            raise ValueError(f"radius must be positive and finite, got {self.r}")

    @classmethod
    def with_default_radius(cls, n: int, m_max: int) -> "LiftingParams":
        """Radius 2*sqrt(m_max): dominates the spectral norm of any matrix
        of up to m_max unit columns with a factor-2 margin."""
        return cls(n=n, m_max=m_max, r=2.0 * math.sqrt(m_max))

    @property
    def q(self) -> int:
        """log2 of m_max."""
        return self.m_max.bit_length() - 1

    @property
    def block_dim(self) -> int:
        return self.n + self.m_max


@dataclass(frozen=True, eq=False)
class OrthoBlock:
    """One lifted chain element: ``full`` has dimension n + m_max and norm r.

    ``index`` is the 1-based position in the emitting sequence.  Blocks from
    ``lift_append`` additionally have lifted support only on their first
    ``index`` lifted coordinates with a real positive pivot; blocks from
    ``lift_batch`` are generally dense in the lifted part.
    """

    full: np.ndarray
    index: int


def classic_gram_schmidt(vs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Orthonormalize ``vs`` in order; requires linear independence.

    The k-th output lies in the span of the first k inputs.  Raises
    LinearDependence when a residual falls below the pivot tolerance
    (use the lifting constructions for dependent inputs) and
    DimensionMismatch for ragged input dimensions.
    """
    if not vs:
        raise DimensionMismatch("input list is empty")
    first = as_state(vs[0])
    dim = first.shape[0]
    basis: list[np.ndarray] = []
    for k, raw in enumerate(vs):
        v = as_state(raw, dim)
        w = v.copy()
        # Two projection passes keep the output Gram matrix at identity to
        # near machine precision even for ill-conditioned inputs.
        for _ in range(2):
            for u in basis:
                w = w - (u.conj() @ w) * u
        nrm = float(np.linalg.norm(w))
        if nrm <= PIVOT_TOL * max(1.0, float(np.linalg.norm(v))):
            raise LinearDependence(f"input {k + 1} is dependent on its predecessors")
        basis.append(w / nrm)
    return basis


def gram_matrix(vs: Sequence[np.ndarray]) -> np.ndarray:
    """Hermitian matrix of pairwise inner products <v_i, v_j> (conjugate
    in the first argument)."""
    if not vs:
        raise DimensionMismatch("input list is empty")
    dim = as_state(vs[0]).shape[0]
    cols = np.column_stack([as_state(v, dim) for v in vs])
    g = cols.conj().T @ cols
    return (g + g.conj().T) / 2.0


def spectral_norm(mat) -> float:
    """Largest singular value."""
    arr = _as_matrix(mat)
    return float(np.linalg.norm(arr, 2))


def sqrt_psd(mat) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues in [NEG_EIG_TOL, 0) are clamped to zero; anything below
    raises NotPSD.
    """
    arr = _as_matrix(mat)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {arr.shape}")
    herm_err = float(np.max(np.abs(arr - arr.conj().T))) if arr.size else 0.0
    if herm_err > ORTHO_TOL:
        raise DimensionMismatch(f"matrix is not Hermitian (deviation {herm_err:.2e})")
    w, q = np.linalg.eigh(arr)
    if w.size and float(w[0]) < NEG_EIG_TOL:
        raise NotPSD(f"eigenvalue {w[0]:.3e} below {NEG_EIG_TOL}")
    w = np.clip(w, 0.0, None)
    s = (q * np.sqrt(w)) @ q.conj().T
    return (s + s.conj().T) / 2.0


def lift_batch(vs: Sequence[np.ndarray], params: LiftingParams) -> list[OrthoBlock]:
    """Lift a whole set of vectors from C^n at once.

    Returns len(vs) pairwise-orthogonal blocks in C^(n + m_max), each of
    norm r; the first n coordinates of block j are exactly vs[j].  Inputs
    may repeat or be linearly dependent.  Raises CapacityExceeded for more
    than m_max inputs and RadiusTooSmall when r does not strictly exceed
    the spectral norm of the stacked input matrix.
    """
    if len(vs) > params.m_max:
        raise CapacityExceeded(f"{len(vs)} inputs exceed capacity {params.m_max}")
    if not vs:
        return []
    cols = [as_state(v, params.n) for v in vs]
    m = len(cols)
    stacked = np.column_stack(cols)
    sigma = spectral_norm(stacked)
    if params.r <= sigma:
        raise RadiusTooSmall(f"radius {params.r} must exceed spectral norm {sigma:.6g}")
    a = stacked / params.r
    b = sqrt_psd(np.eye(m, dtype=np.complex128) - a.conj().T @ a)
    blocks = []
    for j in range(m):
        full = np.zeros(params.block_dim, dtype=np.complex128)
        full[: params.n] = cols[j]
        full[params.n : params.n + m] = params.r * b[:, j]
        blocks.append(OrthoBlock(full=full, index=j + 1))
    return blocks


class LiftingWorkspace:
    """Mutable state of the incremental lifting.

    Owns the Gram matrix of the appended vectors and the upper-triangular
    factor ``chol`` with positive diagonal satisfying
    ``chol^H chol = r^2 I - gram``.  Column j of ``chol`` is the lifted part
    of block j, which is why appending never touches earlier blocks.  Not
    safe for concurrent mutation; every chain owns exactly one workspace.
    """

    def __init__(self, params: LiftingParams):
        self.params = params
        m = params.m_max
        self._gram = np.zeros((m, m), dtype=np.complex128)
        self._chol = np.zeros((m, m), dtype=np.complex128)
        self._vectors: list[np.ndarray] = []
        self.count = 0

    @property
    def gram(self) -> np.ndarray:
        """Gram matrix of the appended vectors (count x count copy)."""
        return self._gram[: self.count, : self.count].copy()

    @property
    def chol(self) -> np.ndarray:
        """Upper-triangular factor with chol^H chol = r^2 I - gram."""
        return self._chol[: self.count, : self.count].copy()

    def lifted_column(self, j: int) -> np.ndarray:
        """Lifted part (length m_max) of the j-th appended block, 0-based."""
        if not 0 <= j < self.count:
            raise IndexError(j)
        return self._chol[:, j].copy()

    def append(self, v) -> OrthoBlock:
        params = self.params
        if self.count >= params.m_max:
            raise CapacityExceeded(f"workspace already holds {params.m_max} blocks")
        vec = as_state(v, params.n)
        k = self.count
        norm_sq = float(np.real(vec.conj() @ vec))
        if k:
            g = np.array([u.conj() @ vec for u in self._vectors])
            y = solve_triangular(self._chol[:k, :k], -g, trans="C", lower=False)
            tail = float(np.real(y.conj() @ y))
        else:
            g = np.zeros(0, dtype=np.complex128)
            y = g
            tail = 0.0
        pivot_sq = params.r**2 - norm_sq - tail
        if pivot_sq <= PIVOT_TOL:
            raise PivotFailure(
                f"pivot {pivot_sq:.3e} at column {k + 1}; radius {params.r} too small"
            )
        self._gram[:k, k] = g
        self._gram[k, :k] = g.conj()
        self._gram[k, k] = norm_sq
        self._chol[:k, k] = y
        self._chol[k, k] = math.sqrt(pivot_sq)
        self._vectors.append(vec.copy())
        self.count = k + 1
        full = np.zeros(params.block_dim, dtype=np.complex128)
        full[: params.n] = vec
        full[params.n :] = self._chol[:, k]
        return OrthoBlock(full=full, index=self.count)


def lift_append(ws: LiftingWorkspace, v) -> OrthoBlock:
    """Append one vector to the incremental lifting; see LiftingWorkspace."""
    return ws.append(v)


def project(w, params: LiftingParams) -> np.ndarray:
    """Drop the lifted coordinates: the linear map returning the first n
    coordinates, which recovers the original input of either lifting."""
    vec = as_state(w, params.block_dim)
    return vec[: params.n].copy()


def complete_to_orthogonal(cols: Sequence[np.ndarray]) -> np.ndarray:
    """Extend orthonormal columns to a full unitary matrix.

    Candidate canonical basis vectors are tried in index order and skipped
    when their residual against the accumulated basis falls below 1e-9, so
    the result is deterministic for a given input order.  Raises
    NotOrthonormal when the inputs are not orthonormal within 1e-9.
    """
    if not cols:
        raise DimensionMismatch("need at least one column")
    dim = as_state(cols[0]).shape[0]
    basis = [as_state(c, dim) for c in cols]
    if len(basis) > dim:
        raise DimensionMismatch(f"{len(basis)} columns cannot fit in dimension {dim}")
    g = gram_matrix(basis)
    if float(np.max(np.abs(g - np.eye(len(basis))))) > ORTHO_TOL:
        raise NotOrthonormal("input columns are not orthonormal within 1e-9")
    out = list(basis)
    for i in range(dim):
        if len(out) == dim:
            break
        w = np.zeros(dim, dtype=np.complex128)
        w[i] = 1.0
        for _ in range(2):
            for u in out:
                w = w - (u.conj() @ w) * u
        nrm = float(np.linalg.norm(w))
        if nrm < ORTHO_TOL:
            continue
        out.append(w / nrm)
    return np.column_stack(out)
