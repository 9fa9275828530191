import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvmcov import matcore
from bvmcov.dist import sample_cov_from
from bvmcov.graph import complete, empty, star
from conftest import random_spd


def sym_matrices(p_max=8):
    return st.integers(1, p_max).flatmap(
        lambda p: st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=p * p, max_size=p * p)
        .map(lambda xs, p=p: _sym(np.array(xs).reshape(p, p))))


def _sym(a):
    return np.tril(a) + np.tril(a, -1).T


def test_vech_small():
    assert matcore.vech(np.array([[1, 2], [2, 3]])).tolist() == [1, 2, 3]
    assert matcore.vech(np.eye(3)).tolist() == [1, 0, 0, 1, 0, 1]


def test_vech_matches_brute_force_elimination(oracle):
    a = np.array(oracle["vech_sym4"]["A"])
    assert np.allclose(matcore.vech(a), oracle["vech_sym4"]["vech"], atol=0)
    assert np.array_equal(matcore.elimination_matrix(4) @ matcore.vec(a), matcore.vech(a))


def test_vech_inverse_small():
    assert np.array_equal(matcore.vech_inverse(np.array([1, 2, 3])), [[1, 2], [2, 3]])
    assert np.array_equal(matcore.vech_inverse(np.zeros(6)), np.zeros((3, 3)))


def test_vech_inverse_rejects_bad_length():
    with pytest.raises(ValueError):
        matcore.vech_inverse(np.zeros(5))


@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_vech_round_trip(p, seed):
    v = np.random.default_rng(seed).standard_normal(p * (p + 1) // 2)
    assert np.array_equal(matcore.vech(matcore.vech_inverse(v)), v)


@given(sym_matrices())
def test_elimination_matrix_extracts_vech(a):
    p = a.shape[0]
    assert np.array_equal(matcore.elimination_matrix(p) @ matcore.vec(a), matcore.vech(a))


def test_elimination_index_formula():
    e = matcore.elimination_matrix(2).toarray()
    # 1-based: (i,j)=(2,1) -> row 2, col 2 ; (2,2) -> row 3, col 4
    assert e[1, 1] == 1 and e[1].sum() == 1
    assert e[2, 3] == 1 and e[2].sum() == 1


def test_elimination_p3_matches_oracle(oracle):
    e = matcore.elimination_matrix(3).toarray()
    assert np.array_equal(e, np.array(oracle["elimination_p3"]))
    a = np.array([[1, 2, 3], [2, 4, 5], [3, 5, 6]], float)
    assert (e @ matcore.vec(a)).tolist() == [1, 2, 3, 4, 5, 6]


def test_graph_elimination_map_cases():
    m = matcore.graph_elimination_map(empty(3)).toarray()
    assert m.shape == (3, 9)
    assert [int(np.flatnonzero(r)[0]) + 1 for r in m] == [1, 5, 9]
    assert (matcore.graph_elimination_map(complete(3)) != matcore.elimination_matrix(3)).nnz == 0
    m = matcore.graph_elimination_map(star(3)).toarray()
    rows, cols = matcore.graph_indices(3, star(3).edges)
    assert [(r + 1, c + 1) for r, c in zip(rows, cols)] == [(1, 1), (2, 1), (3, 1), (2, 2), (3, 3)]
    assert m.shape == (5, 9)


@pytest.mark.parametrize("p", [2, 5, 8])
def test_graph_map_complete_equals_elimination(p):
    assert (matcore.graph_elimination_map(complete(p)) != matcore.elimination_matrix(p)).nnz == 0


def test_smn_cov_identity_p2(oracle):
    cov = matcore.smn_halfvec_cov(np.eye(2), np.eye(2), 2.0)
    assert np.allclose(cov, oracle["smn_cov_I2_factor2"], atol=1e-12)
    assert np.allclose(np.diag(cov), [2, 1, 2])


def test_smn_cov_matches_duplication_construction(oracle):
    psi = matcore.ar1(3, 0.5)
    assert np.allclose(matcore.smn_halfvec_cov(psi, psi, 2.0), oracle["smn_cov_ar1_p3_factor2"], atol=1e-12)


def test_smn_cov_scalar():
    assert matcore.smn_halfvec_cov(np.array([[3.0]]), np.array([[3.0]]), 2.0)[0, 0] == pytest.approx(18.0)


def test_smn_cov_star_restriction():
    cov = matcore.smn_halfvec_cov(np.eye(3), np.eye(3), 2.0, star(3))
    assert np.allclose(cov, np.diag([2, 1, 1, 2, 2]))


def test_smn_cov_rejects_noncommuting():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    with pytest.raises(ValueError):
        matcore.smn_halfvec_cov(a, np.diag([1.0, 3.0]), 1.0)


@given(st.integers(1, 5), st.integers(0, 2 ** 31), st.floats(0.1, 10))
def test_smn_cov_psd_and_relabel_invariant(p, seed, factor):
    rng = np.random.default_rng(seed)
    psi = random_spd(rng, p)
    cov = matcore.smn_halfvec_cov(psi, psi, factor)
    assert np.linalg.eigvalsh(cov)[0] > -1e-9 * np.max(np.diag(cov))
    perm = rng.permutation(p)
    cov_p = matcore.smn_halfvec_cov(psi[np.ix_(perm, perm)], psi[np.ix_(perm, perm)], factor)
    # coordinate (i, j) of the relabelled matrix is (perm[i], perm[j]) of the original
    rows, cols = matcore.vech_indices(p)
    pos = {(r, c): k for k, (r, c) in enumerate(zip(rows, cols))}
    idx = [pos[max(perm[r], perm[c]), min(perm[r], perm[c])] for r, c in zip(rows, cols)]
    assert np.allclose(cov_p, cov[np.ix_(idx, idx)], rtol=1e-10, atol=1e-12)


def test_wishart_fluctuation_matches_smn_cov():
    # covariance of vech(sqrt(n)(S - psi)) over many replicates of S
    rng = np.random.default_rng(3)
    psi, n, reps = matcore.ar1(2, 0.5), 400, 20000
    v = np.array([matcore.vech(math.sqrt(n) * (sample_cov_from(psi, n, rng) - psi)) for _ in range(reps)])
    emp = np.cov(v, rowvar=False)
    target = matcore.smn_halfvec_cov(psi, psi, 2.0)
    # SE of a sample covariance entry: sqrt((E[x^2 y^2] - cov^2) / reps)
    c = v - v.mean(axis=0)
    se = np.sqrt(np.var(c[:, :, None] * c[:, None, :], axis=0) / reps)
    assert np.all(np.abs(emp - target) <= 4 * se + 1e-12)


def test_norms_examples():
    nm = matcore.norms(np.eye(3))
    assert nm == {"spectral": 1.0, "frobenius": pytest.approx(math.sqrt(3)), "max": 1.0, "inf_inf": 1.0}
    nm = matcore.norms(np.array([[0, 2], [0, 0]]))
    assert nm["spectral"] == pytest.approx(2) and nm["inf_inf"] == 2


@given(st.integers(0, 2 ** 31))
def test_spectral_norm_is_max_abs_eigenvalue(seed):
    a = np.random.default_rng(seed).standard_normal((5, 5))
    a = a + a.T
    w = np.linalg.eigvalsh(a)
    assert matcore.norms(a)["spectral"] == pytest.approx(np.max(np.abs(w)), rel=1e-12)
    assert matcore.spectral_norm(a) == pytest.approx(np.max(np.abs(w)), rel=1e-12)


def test_norms_reject_nonfinite():
    with pytest.raises(ValueError):
        matcore.norms(np.array([[np.nan]]))


def test_cholesky_examples(rng):
    assert np.array_equal(matcore.cholesky(np.eye(4)), np.eye(4))
    assert np.allclose(matcore.cholesky(np.array([[4.0, 2.0], [2.0, 2.0]])), [[2, 0], [1, 1]])
    a = random_spd(rng, 6)
    low = matcore.cholesky(a)
    assert np.max(np.abs(low @ low.T - a)) < 1e-12 * np.max(np.abs(a)) * 10


def test_cholesky_names_failing_minor():
    a = np.array([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(matcore.NotPositiveDefiniteError) as exc:
        matcore.cholesky(a)
    assert exc.value.minor == 2
