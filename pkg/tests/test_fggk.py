import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from sdkrylov.fggk import (
    ZeroResidual,
    alt_relation_residuals,
    fggk_alt_init,
    fggk_alt_step,
    fggk_init,
    fggk_step,
    fixed_d_krylov_basis,
    qr_update,
    relation_residuals,
)
from sdkrylov.operators import CallCounter, counting_map, counting_spd, diag_map, identity, matrix_map

from conftest import random_instance


def dense_parts(p):
    return p.A.todense(), p.Q.todense(), p.Rinv.todense()


def varying_d(n, k, seed):
    rng = np.random.default_rng(seed)
    return [diag_map(rng.uniform(0.2, 3.0, n)) for _ in range(k)]


def test_init_examples():
    e1 = np.eye(3)[0]
    st_ = fggk_init(matrix_map(np.eye(3)), identity(3), identity(3), e1)
    assert st_.beta1 == 1.0
    np.testing.assert_array_equal(st_.u[0], e1)
    st_ = fggk_init(matrix_map(np.eye(1)), diag_map([4.0]).inverse(), identity(1), np.array([2.0]))
    assert st_.beta1 == pytest.approx(1.0)
    np.testing.assert_allclose(st_.u[0], [2.0])
    with pytest.raises(ZeroResidual):
        fggk_init(matrix_map(np.eye(3)), identity(3), identity(3), np.zeros(3))


def test_identity_setup_breaks_down_benignly():
    I2 = identity(2)
    st_ = fggk_step(fggk_init(matrix_map(np.eye(2)), I2, I2, np.array([1.0, 0.0])), I2)
    np.testing.assert_allclose(st_.v[0], [1.0, 0.0])
    np.testing.assert_allclose(st_.w[0], [1.0, 0.0])
    np.testing.assert_allclose(st_.M, [[2.0], [0.0]])
    assert st_.breakdown == "benign"
    with pytest.raises(RuntimeError):
        fggk_step(st_, I2)


def run(p, k, seed=0, mode="smooth_and_sparse", reorth=True):
    st_ = fggk_init(p.A, p.Rinv, p.Q, p.d, mode=mode, reorth=reorth)
    for D in varying_d(p.A.ncols, k, seed):
        fggk_step(st_, D)
    return st_


def test_relations_three_steps():
    p = random_instance(12, 10, seed=3)
    res = relation_residuals(run(p, 3), *dense_parts(p))
    assert res["AQZ"] <= 1e-10 and res["ATRU"] <= 1e-10


@pytest.mark.parametrize("mode", ["smooth_and_sparse", "smooth_only", "sparse_only"])
def test_orthogonality_after_eight_steps(mode):
    p = random_instance(20, 16, seed=4)
    res = relation_residuals(run(p, 8, mode=mode), *dense_parts(p))
    assert res["orth_V"] <= 1e-10 and res["orth_U"] <= 1e-10
    assert res["AQZ"] <= 1e-10 and res["ATRU"] <= 1e-10


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 10))
def test_relations_hold_property(seed, k):
    p = random_instance(25, 18, seed=seed)
    res = relation_residuals(run(p, k, seed), *dense_parts(p))
    assert max(res.values()) <= 1e-9


def test_qr_update_examples():
    e = np.eye(3)
    QW, RW, flag = qr_update(e[:, :1], np.eye(1), e[:, 1])
    np.testing.assert_allclose(QW, e[:, :2])
    np.testing.assert_allclose(RW, np.eye(2))
    assert not flag
    QW, RW, flag = qr_update(e[:, :1], np.eye(1), e[:, 0])
    assert flag and RW[1, 1] == 0.0
    np.testing.assert_allclose(QW.T @ QW, np.eye(2), atol=1e-15)


@pytest.mark.parametrize("shape", [(6, 3), (50, 20)])
def test_qr_update_matches_full_qr(shape, rng):
    W = rng.standard_normal(shape)
    QW, RW = None, None
    for j in range(shape[1]):
        QW, RW, _ = qr_update(QW, RW, W[:, j])
    _, Rref = np.linalg.qr(W)
    np.testing.assert_allclose(np.abs(RW), np.abs(Rref), atol=1e-10)
    np.testing.assert_allclose(QW @ RW, W, atol=1e-12)
    f = rng.standard_normal(shape[1])
    assert np.linalg.norm(W @ f) == pytest.approx(np.linalg.norm(RW @ f), rel=1e-10)


def test_fixed_d_basis_examples(rng):
    c = rng.standard_normal(5)
    I = identity(5)
    B = fixed_d_krylov_basis(matrix_map(np.eye(5)), I, I, I, c, 1)
    np.testing.assert_allclose(B[:, 0], c / np.linalg.norm(c))
    # E = A (Q + D^-1) A^T R^-1 = I when A = I/sqrt(2)
    B = fixed_d_krylov_basis(matrix_map(np.eye(5) / np.sqrt(2)), I, I, I, c, 4)
    for j in range(4):
        np.testing.assert_allclose(B[:, j], c / np.linalg.norm(c), atol=1e-14)


def test_fixed_d_span_equivalence():
    p = random_instance(30, 24, seed=7)
    Dhat = diag_map(np.random.default_rng(1).uniform(0.5, 2.0, 24))
    Dinv = Dhat.inverse()
    k = 8
    st_ = fggk_init(p.A, p.Rinv, p.Q, p.d)
    for _ in range(k):
        fggk_step(st_, Dinv)
    K = fixed_d_krylov_basis(p.A, p.Rinv, p.Q, Dinv, p.d, k)
    angles = sla.subspace_angles(st_.U[:, :k], K)
    assert angles.max() <= 1e-8


def test_smooth_only_spans_gengk_subspace():
    p = random_instance(30, 24, seed=8)
    A, Q, Rinv = dense_parts(p)
    k = 6
    st_ = fggk_init(p.A, p.Rinv, p.Q, p.d, mode="smooth_only")
    for _ in range(k):
        fggk_step(st_)
    E = A.T @ Rinv @ A @ Q
    cols = [A.T @ Rinv @ p.d]
    for _ in range(k - 1):
        y = E @ cols[-1]
        cols.append(y / np.linalg.norm(y))
    assert sla.subspace_angles(st_.V, np.column_stack(cols)).max() <= 1e-8


def test_step_cost_counts():
    p = random_instance(15, 12, seed=2)
    cnt = CallCounter()
    A = counting_map(p.A, cnt)
    Q = counting_spd(p.Q, cnt, "Q")
    Rinv = counting_spd(p.Rinv, cnt, "Rinv")
    st_ = fggk_init(A, Rinv, Q, p.d)
    assert cnt == {"Rinv": 1}
    cnt.clear()
    k = 5
    for D in varying_d(12, k, 0):
        fggk_step(st_, counting_spd(D, cnt, "Dinv"))
    assert cnt == {"A": k, "AT": k, "Q": 2 * k, "Rinv": k, "Dinv": k}


def test_alt_identity_setup_breaks_down():
    I2 = identity(2)
    st_ = fggk_alt_init(matrix_map(np.eye(2)), I2, I2, np.array([1.0, 0.0]))
    fggk_alt_step(st_, I2)
    assert st_.breakdown == "benign"


def test_alt_relations_and_orthogonality():
    p = random_instance(20, 14, seed=9)
    st_ = fggk_alt_init(p.A, p.Rinv, p.Q, p.d)
    for j, D in enumerate(varying_d(14, 8, 2)):
        fggk_alt_step(st_, D)
        if j == 2:
            res = alt_relation_residuals(st_, *dense_parts(p))
            assert res["AQZ"] <= 1e-10 and res["ATRU"] <= 1e-10
    res = alt_relation_residuals(st_, *dense_parts(p))
    assert res["orth_U"] <= 1e-8 and res["orth_V"] <= 1e-8
