"""Fork reconciliation: an explicit unitary mapping one chain onto another.

When two chains agree on their first i blocks and carry the same confirmed
transactions afterwards in a different order, the minority holder can
rotate its blocks onto the majority's with a single operator

    O = sum_{j<=i} W_j W_j^H  +  sum_{i<j<=c} W_j X_j^H  +  sum_{j>c} q_j p_j^H

where W are the majority blocks, X the local blocks (all unit-normalized),
and p / q complete the local and majority chains to orthonormal bases of
the full space.  O maps an orthonormal basis onto an orthonormal basis, so
it is unitary; it fixes the shared prefix and sends each local block to
its majority counterpart.  The scaled chain blocks (norm r) transform by
linearity.
"""

from __future__ import annotations

import numpy as np

from .errors import ChainMismatch, NotOrthogonal
from .lifting import ORTHO_TOL, as_state, complete_to_orthogonal


def extend_orthobasis(blocks, k: int) -> list[np.ndarray]:
    """Unit vectors completing pairwise-orthogonal ``blocks`` to an
    orthogonal basis of C^k; deterministic in the input order."""
    vecs = [as_state(b, k) for b in blocks]
    if not vecs:
        raise NotOrthogonal("need at least one vector to extend")
    units = []
    for v in vecs:
        nrm = float(np.linalg.norm(v))
        if nrm <= ORTHO_TOL:
            raise NotOrthogonal("cannot extend a zero vector")
        units.append(v / nrm)
    for j in range(len(units)):
        for i in range(j):
            if abs(np.vdot(units[i], units[j])) > ORTHO_TOL:
                raise NotOrthogonal(f"inputs {i + 1} and {j + 1} are not orthogonal")
    full = complete_to_orthogonal(units)
    return [full[:, j].copy() for j in range(len(units), k)]


def _check_chain(vectors, k: int, label: str) -> list[np.ndarray]:
    out = []
    for idx, v in enumerate(vectors):
        vec = as_state(v, k)
        if abs(float(np.linalg.norm(vec)) - 1.0) > ORTHO_TOL:
            raise ChainMismatch(f"{label} block {idx + 1} is not unit norm")
        out.append(vec)
    for j in range(len(out)):
        for i in range(j):
            if abs(np.vdot(out[i], out[j])) > ORTHO_TOL:
                raise ChainMismatch(f"{label} blocks {i + 1},{j + 1} are not orthogonal")
    return out


def build_fork_operator(majority, local, i: int, k: int) -> np.ndarray:
    """The reconciliation unitary for unit-normalized chains of equal
    length agreeing on their first ``i`` blocks.

    Raises ChainMismatch on length or prefix disagreement or when either
    side is not an orthogonal set.
    """
    maj = _check_chain(majority, k, "majority")
    loc = _check_chain(local, k, "local")
    if len(maj) != len(loc):
        raise ChainMismatch(f"chain lengths differ: {len(maj)} vs {len(loc)}")
    count = len(maj)
    if not 0 <= i <= count:
        raise ChainMismatch(f"prefix length {i} outside [0, {count}]")
    if count == 0 or count > k:
        raise ChainMismatch(f"chain length {count} invalid for dimension {k}")
    for j in range(i):
        if float(np.max(np.abs(maj[j] - loc[j]))) > ORTHO_TOL:
            raise ChainMismatch(f"chains disagree inside the shared prefix at block {j + 1}")
    p_ext = extend_orthobasis(loc, k)
    q_ext = extend_orthobasis(maj, k)
    op = np.zeros((k, k), dtype=np.complex128)
    for j in range(i):
        op += np.outer(maj[j], maj[j].conj())
    for j in range(i, count):
        op += np.outer(maj[j], loc[j].conj())
    for p, q in zip(p_ext, q_ext):
        op += np.outer(q, p.conj())
    return op
