import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specproj.exceptions import (
    AsymmetricInputError,
    DimensionMismatchError,
    NonSquareError,
    ValidationError,
)
from specproj.linalg import (
    SymmetricOperator,
    eigh,
    eigvalsh,
    hs_inner,
    hs_norm,
    lowrank_op_norm,
    make_symmetric,
    op_norm,
    read_matrix_csv,
    read_numeric_csv,
    top_eigh,
    trace,
    write_matrix_csv,
)

from .conftest import seeds


def test_already_symmetric_is_unchanged():
    a = make_symmetric([[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(a.entries, [[2.0, 0.0], [0.0, 1.0]])


def test_roundoff_asymmetry_is_averaged():
    a = make_symmetric([[1.0, 2.0], [2.0 + 1e-15, 1.0]])
    np.testing.assert_allclose(a.entries, [[1, 2], [2, 1]], atol=1e-15)
    assert a.entries[0, 1] == a.entries[1, 0]


def test_asymmetric_rejected():
    with pytest.raises(AsymmetricInputError):
        make_symmetric([[1.0, 2.0], [3.0, 1.0]])


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros(3), np.zeros((0, 0))])
def test_nonsquare_rejected(bad):
    with pytest.raises((NonSquareError, ValidationError)):
        make_symmetric(bad)


def test_nonfinite_rejected():
    with pytest.raises(ValidationError):
        make_symmetric([[np.nan, 0.0], [0.0, 1.0]])


def test_entries_are_read_only():
    a = make_symmetric(np.eye(2))
    with pytest.raises(ValueError):
        a.entries[0, 0] = 5.0


def test_operator_arithmetic():
    a = make_symmetric(np.diag([2.0, 1.0]))
    b = make_symmetric([[0.0, 1.0], [1.0, 0.0]])
    assert isinstance(a + b, SymmetricOperator)
    np.testing.assert_array_equal((a - b).entries, [[2, -1], [-1, 1]])
    np.testing.assert_array_equal((2 * a).entries, np.diag([4.0, 2.0]))
    np.testing.assert_array_equal(a @ b, [[0, 2], [1, 0]])


def test_eigh_diagonal():
    dec = eigh(np.diag([1.0, 2.0, 1.0]))
    np.testing.assert_allclose(dec.eigenvalues, [2, 1, 1])


def test_eigh_identity_basis_orthonormal():
    dec = eigh(np.eye(5))
    np.testing.assert_allclose(dec.eigenvalues, np.ones(5))
    np.testing.assert_allclose(dec.eigenvectors.T @ dec.eigenvectors, np.eye(5), atol=1e-14)


def test_eigh_swap_matrix_hand_solution():
    dec = eigh([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(dec.eigenvalues, [1, -1], atol=1e-15)
    s = 1 / math.sqrt(2)
    # signs fixed so that the first nonzero component is positive
    np.testing.assert_allclose(dec.eigenvectors[:, 0], [s, s], atol=1e-15)
    np.testing.assert_allclose(dec.eigenvectors[:, 1], [s, -s], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, p=st.integers(1, 12))
def test_eigh_reconstructs(seed, p):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, p))
    a = make_symmetric(g + g.T)
    dec = eigh(a)
    assert np.all(np.diff(dec.eigenvalues) <= 0)
    np.testing.assert_allclose(dec.reconstruct(), a.entries, atol=1e-11 * max(1, op_norm(a)))
    np.testing.assert_allclose(dec.eigenvectors.T @ dec.eigenvectors, np.eye(p), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, p=st.integers(2, 10), data=st.data())
def test_top_eigh_matches_full(seed, p, data):
    k = data.draw(st.integers(1, p))
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, p))
    a = g @ g.T
    full, top = eigh(a), top_eigh(a, k)
    np.testing.assert_allclose(top.eigenvalues, full.eigenvalues[:k], rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, p=st.integers(1, 10))
def test_norms_agree_with_numpy(seed, p):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, p))
    a = g + g.T
    b = rng.standard_normal((p, p))
    b = b + b.T
    assert op_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-10)
    assert hs_norm(a) == pytest.approx(np.linalg.norm(a, "fro"), rel=1e-12)
    assert trace(a) == pytest.approx(np.trace(a), abs=1e-12)
    assert hs_inner(a, b) == pytest.approx(np.trace(a @ b), rel=1e-10, abs=1e-10)
    assert np.all(np.abs(eigvalsh(a)) <= op_norm(a) * (1 + 1e-12))


def test_hs_inner_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        hs_inner(np.eye(2), np.eye(3))


@settings(max_examples=40, deadline=None)
@given(seed=seeds, p=st.integers(3, 15), k=st.integers(1, 3))
def test_lowrank_op_norm_matches_dense(seed, p, k):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((p, k))
    c = rng.standard_normal((k, k))
    c = c + c.T
    dense = u @ c @ u.T
    assert lowrank_op_norm(u, c) == pytest.approx(np.linalg.norm(dense, 2), rel=1e-9, abs=1e-12)


def test_csv_roundtrip(tmp_path):
    a = make_symmetric([[2.0, 0.1], [0.1, 1.0 / 3.0]])
    path = tmp_path / "m.csv"
    write_matrix_csv(path, a)
    assert read_matrix_csv(path) == a


def test_ragged_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,0,0\n0,1\n0,0,1\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_numeric_csv(path)


def test_non_numeric_csv_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,0\n0,x\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_numeric_csv(path)


def test_nonsquare_matrix_file(tmp_path):
    path = tmp_path / "rect.csv"
    path.write_text("1,0,0\n0,1,0\n")
    with pytest.raises(NonSquareError):
        read_matrix_csv(path)
