"""Tests for the dimensional-lifting core."""

import math

import numpy as np
import pytest

from liftchain.errors import (
    CapacityExceeded,
    DimensionMismatch,
    LinearDependence,
    NotOrthonormal,
    NotPSD,
    PivotFailure,
    RadiusTooSmall,
)
from liftchain.lifting import (
    LiftingParams,
    LiftingWorkspace,
    classic_gram_schmidt,
    complete_to_orthogonal,
    gram_matrix,
    lift_append,
    lift_batch,
    project,
    spectral_norm,
    sqrt_psd,
)

RNG = np.random.default_rng(20240817)


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_unit(rng, n):
    v = random_complex(rng, n)
    return v / np.linalg.norm(v)


# --- classic Gram-Schmidt ---

def test_gs_orthonormal_input_is_fixed_point():
    out = classic_gram_schmidt([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.allclose(out[0], [1, 0])
    assert np.allclose(out[1], [0, 1])


def test_gs_hand_worked_pair():
    # hand application of the recursion: w2 = (1,1) - <w1,(1,1)> w1 = (0,1)
    out = classic_gram_schmidt([np.array([1.0, 0.0]), np.array([1.0, 1.0])])
    assert np.allclose(out[0], [1, 0], atol=1e-15)
    assert np.allclose(out[1], [0, 1], atol=1e-15)


def test_gs_linear_dependence_raises():
    with pytest.raises(LinearDependence):
        classic_gram_schmidt([np.array([1.0, 0.0]), np.array([2.0, 0.0])])


def test_gs_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        classic_gram_schmidt([np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0])])


def test_gs_output_gram_is_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, n + 1))
        vs = [random_complex(rng, n) for _ in range(k)]
        out = classic_gram_schmidt(vs)
        g = gram_matrix(out)
        assert np.max(np.abs(g - np.eye(k))) <= 1e-9


def test_gs_span_is_preserved_per_prefix():
    rng = np.random.default_rng(8)
    vs = [random_complex(rng, 5) for _ in range(4)]
    out = classic_gram_schmidt(vs)
    for k in range(1, 5):
        # k-th output must lie in the span of the first k inputs
        basis = np.column_stack(vs[:k])
        coeffs, *_ = np.linalg.lstsq(basis, out[k - 1], rcond=None)
        assert np.linalg.norm(basis @ coeffs - out[k - 1]) < 1e-9


# --- gram_matrix ---

def test_gram_orthonormal_pair_is_identity():
    g = gram_matrix([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.allclose(g, np.eye(2))


def test_gram_duplicated_unit_vector_all_ones():
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    g = gram_matrix([v, v])
    assert np.allclose(g, np.ones((2, 2)))


def test_gram_matches_double_loop_oracle():
    rng = np.random.default_rng(9)
    vs = [random_complex(rng, 3) for _ in range(4)]
    g = gram_matrix(vs)
    for i in range(4):
        for j in range(4):
            expected = np.sum(np.conj(vs[i]) * vs[j])
            assert abs(g[i, j] - expected) < 1e-12


# --- spectral_norm ---

def power_iteration_norm(mat, iters=4000):
    """Independent oracle: power iteration on M^H M."""
    m = np.asarray(mat, dtype=complex)
    h = m.conj().T @ m
    v = np.ones(h.shape[0], dtype=complex)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = h @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        lam = float(np.real(v.conj() @ h @ v))
    return math.sqrt(lam)


def test_spectral_norm_identity():
    assert abs(spectral_norm(np.eye(3)) - 1.0) < 1e-12


def test_spectral_norm_single_column():
    col = np.array([[3.0], [4.0]])
    assert abs(spectral_norm(col) - 5.0) < 1e-12


def test_spectral_norm_matches_power_iteration():
    rng = np.random.default_rng(10)
    m = random_complex(rng, 6, 4)
    got = spectral_norm(m)
    want = power_iteration_norm(m)
    assert abs(got - want) <= 1e-9 * max(1.0, want)


def test_spectral_norm_rejects_nonfinite():
    with pytest.raises(ValueError):
        spectral_norm(np.array([[np.nan, 0.0], [0.0, 1.0]]))


# --- sqrt_psd ---

def test_sqrt_psd_identity():
    assert np.allclose(sqrt_psd(np.eye(4)), np.eye(4))


def test_sqrt_psd_diagonal():
    s = sqrt_psd(np.diag([4.0, 9.0]))
    assert np.allclose(s, np.diag([2.0, 3.0]))


def test_sqrt_psd_residual_oracle():
    rng = np.random.default_rng(11)
    x = random_complex(rng, 6, 6)
    h = x.conj().T @ x
    s = sqrt_psd(h)
    assert np.max(np.abs(s @ s - h)) <= 1e-9
    assert np.max(np.abs(s - s.conj().T)) <= 1e-12


def test_sqrt_psd_rejects_negative_eigenvalue():
    with pytest.raises(NotPSD):
        sqrt_psd(np.diag([1.0, -1e-6]))


# --- lift_batch ---

def test_lift_batch_worked_single_vector():
    # A = e1/2, B = sqrt(1 - 1/4) = sqrt(3)/2, block = (1, 0, sqrt(3), 0)
    params = LiftingParams(n=2, m_max=2, r=2.0)
    (block,) = lift_batch([np.array([1.0, 0.0])], params)
    assert np.allclose(block.full, [1.0, 0.0, math.sqrt(3.0), 0.0], atol=1e-12)
    assert abs(np.linalg.norm(block.full) - 2.0) < 1e-12
    assert np.allclose(project(block.full, params), [1.0, 0.0])


def test_lift_batch_linearly_dependent_pair():
    params = LiftingParams(n=3, m_max=4, r=4.0)
    rng = np.random.default_rng(12)
    v = random_unit(rng, 3)
    blocks = lift_batch([v, v], params)
    w0, w1 = blocks[0].full, blocks[1].full
    # brute-force inner product check on the output
    assert abs(np.vdot(w0, w1)) <= 1e-9 * params.r**2
    for blk in blocks:
        assert abs(np.linalg.norm(blk.full) - params.r) <= 1e-9 * params.r
        assert np.allclose(project(blk.full, params), v, atol=1e-12)


def test_lift_batch_radius_too_small():
    params = LiftingParams(n=2, m_max=2, r=0.5)
    with pytest.raises(RadiusTooSmall):
        lift_batch([np.array([1.0, 0.0])], params)


def test_lift_batch_capacity():
    params = LiftingParams(n=2, m_max=2, r=4.0)
    vs = [np.array([1.0, 0.0])] * 3
    with pytest.raises(CapacityExceeded):
        lift_batch(vs, params)


def test_lift_batch_random_sets_invariants():
    rng = np.random.default_rng(13)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 9))
        params = LiftingParams.with_default_radius(n, 8)
        vs = [random_unit(rng, n) for _ in range(m)]
        if m >= 2 and rng.random() < 0.5:
            vs[-1] = vs[0]  # force dependence
        blocks = lift_batch(vs, params)
        mat = np.column_stack([b.full for b in blocks])
        g = mat.conj().T @ mat
        off = g - np.diag(np.diag(g))
        assert np.max(np.abs(off)) <= 1e-9 * params.r**2
        assert np.max(np.abs(np.sqrt(np.real(np.diag(g))) - params.r)) <= 1e-9 * params.r
        for v, b in zip(vs, blocks):
            assert np.max(np.abs(project(b.full, params) - v)) <= 1e-12


# --- lift_append ---

def test_lift_append_first_block_pivot():
    # chol of r^2 I - G with G = [1] gives sqrt(3)
    params = LiftingParams(n=3, m_max=4, r=2.0)
    ws = LiftingWorkspace(params)
    rng = np.random.default_rng(14)
    v = random_unit(rng, 3)
    block = lift_append(ws, v)
    lifted = block.full[params.n :]
    assert abs(lifted[0] - math.sqrt(3.0)) < 1e-12
    assert np.allclose(lifted[1:], 0.0)
    assert np.allclose(project(block.full, params), v, atol=1e-15)


def test_lift_append_prefix_stability_bit_for_bit():
    params = LiftingParams.with_default_radius(4, 8)
    rng = np.random.default_rng(15)
    vs = [random_unit(rng, 4) for _ in range(4)]

    ws_a = LiftingWorkspace(params)
    first_three = [lift_append(ws_a, v).full.copy() for v in vs[:3]]

    ws_b = LiftingWorkspace(params)
    rerun = [lift_append(ws_b, v).full.copy() for v in vs]
    for before, after in zip(first_three, rerun[:3]):
        assert np.array_equal(before, after)


def test_lift_append_capacity():
    params = LiftingParams(n=2, m_max=2, r=4.0)
    ws = LiftingWorkspace(params)
    rng = np.random.default_rng(16)
    lift_append(ws, random_unit(rng, 2))
    lift_append(ws, random_unit(rng, 2))
    with pytest.raises(CapacityExceeded):
        lift_append(ws, random_unit(rng, 2))


def test_lift_append_pivot_failure_on_tiny_radius():
    # r = 1.2 supports one unit vector (pivot r^2 - 1) but duplicating the
    # same vector exhausts the radius on the second append.
    params = LiftingParams(n=2, m_max=2, r=1.2)
    ws = LiftingWorkspace(params)
    v = np.array([1.0, 0.0])
    lift_append(ws, v)
    with pytest.raises(PivotFailure):
        lift_append(ws, v)


def test_lift_append_invariants_and_triangular_structure():
    rng = np.random.default_rng(17)
    for _ in range(15):
        n = int(rng.integers(2, 7))
        params = LiftingParams.with_default_radius(n, 8)
        count = int(rng.integers(1, 9))
        vs = [random_unit(rng, n) for _ in range(count)]
        if count >= 2 and rng.random() < 0.5:
            vs[-1] = vs[0]
        ws = LiftingWorkspace(params)
        blocks = [lift_append(ws, v) for v in vs]
        mat = np.column_stack([b.full for b in blocks])
        g = mat.conj().T @ mat
        off = g - np.diag(np.diag(g))
        assert np.max(np.abs(off)) <= 1e-9 * params.r**2
        assert np.max(np.abs(np.sqrt(np.real(np.diag(g))) - params.r)) <= 1e-9 * params.r
        for j, (v, b) in enumerate(zip(vs, blocks)):
            assert np.max(np.abs(project(b.full, params) - v)) <= 1e-12
            lifted = b.full[n:]
            assert np.allclose(lifted[j + 1 :], 0.0)
            assert lifted[j].real > 0 and abs(lifted[j].imag) < 1e-15


def test_lift_append_lifted_parts_gs_gives_computational_basis():
    # orthonormalizing the lifted parts must reproduce e_1 ... e_count
    rng = np.random.default_rng(18)
    n, count = 5, 6
    params = LiftingParams.with_default_radius(n, 8)
    ws = LiftingWorkspace(params)
    blocks = [lift_append(ws, random_unit(rng, n)) for _ in range(count)]
    lifted = [b.full[n : n + count] for b in blocks]
    basis = classic_gram_schmidt(lifted)
    for j, e in enumerate(basis):
        target = np.zeros(count)
        target[j] = 1.0
        assert np.max(np.abs(e - target)) <= 1e-9


def test_workspace_chol_factorization_identity():
    rng = np.random.default_rng(19)
    params = LiftingParams.with_default_radius(3, 4)
    ws = LiftingWorkspace(params)
    for _ in range(4):
        lift_append(ws, random_unit(rng, 3))
    reconstructed = ws.chol.conj().T @ ws.chol
    target = params.r**2 * np.eye(4) - ws.gram
    assert np.max(np.abs(reconstructed - target)) <= 1e-9


# --- project ---

def test_project_dimension_mismatch():
    params = LiftingParams(n=2, m_max=2, r=4.0)
    with pytest.raises(DimensionMismatch):
        project(np.zeros(3), params)


# --- complete_to_orthogonal ---

def test_complete_single_basis_vector():
    e1 = np.array([1.0, 0.0, 0.0])
    n = complete_to_orthogonal([e1])
    assert n.shape == (3, 3)
    assert np.allclose(n[:, 0], e1)
    assert np.max(np.abs(n.conj().T @ n - np.eye(3))) <= 1e-9


def test_complete_lift_batch_columns():
    params = LiftingParams(n=3, m_max=4, r=4.0)
    rng = np.random.default_rng(20)
    vs = [random_unit(rng, 3) for _ in range(4)]
    blocks = lift_batch(vs, params)
    cols = [b.full / params.r for b in blocks]
    n = complete_to_orthogonal(cols)
    assert n.shape == (7, 7)
    assert np.max(np.abs(n.conj().T @ n - np.eye(7))) <= 1e-9


def test_complete_rejects_non_orthonormal():
    with pytest.raises(NotOrthonormal):
        complete_to_orthogonal([np.array([1.0, 0.0]), np.array([1.0, 1.0]) / math.sqrt(2)])


def test_complete_is_deterministic():
    rng = np.random.default_rng(21)
    vs = [random_unit(rng, 5) for _ in range(2)]
    cols = classic_gram_schmidt(vs)
    a = complete_to_orthogonal(cols)
    b = complete_to_orthogonal(cols)
    assert np.array_equal(a, b)


# --- variant equivalence: both satisfy the same invariants independently ---

def test_batch_and_incremental_variants_both_satisfy_invariants():
    rng = np.random.default_rng(22)
    n = 4
    params = LiftingParams.with_default_radius(n, 4)
    vs = [random_unit(rng, n) for _ in range(4)]
    batch = [b.full for b in lift_batch(vs, params)]
    ws = LiftingWorkspace(params)
    incr = [lift_append(ws, v).full for v in vs]
    for outputs in (batch, incr):
        mat = np.column_stack(outputs)
        g = mat.conj().T @ mat
        assert np.max(np.abs(g - params.r**2 * np.eye(4))) <= 1e-9 * params.r**2
        for v, w in zip(vs, outputs):
            assert np.max(np.abs(w[:n] - v)) <= 1e-12
    # and they are related by a unitary acting only on the lifted coordinates
    lifted_b = np.column_stack([w[n:] for w in batch])
    lifted_i = np.column_stack([w[n:] for w in incr])
    u, *_ = np.linalg.lstsq(lifted_i.conj().T, lifted_b.conj().T, rcond=None)
    u = u.conj().T
    assert np.max(np.abs(u @ lifted_i - lifted_b)) <= 1e-8


def test_params_validation():
    with pytest.raises(ValueError):
        LiftingParams(n=0, m_max=2, r=1.0)
    with pytest.raises(ValueError):
        LiftingParams(n=2, m_max=3, r=1.0)
    with pytest.raises(ValueError):
        LiftingParams(n=2, m_max=2, r=0.0)
    p = LiftingParams.with_default_radius(2, 16)
    assert p.r == 8.0 and p.q == 4 and p.block_dim == 18
