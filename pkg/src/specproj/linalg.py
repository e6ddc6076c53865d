"""Dense symmetric-matrix algebra.

All operators are real, dense and symmetric. Tolerances are relative to
``max(1, max|entries|)`` so that checks behave the same across scales.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.linalg

from .exceptions import (
    AsymmetricInputError,
    ConvergenceFailure,
    DimensionMismatchError,
    NonSquareError,
    ValidationError,
)

SYMMETRY_TOL = 1e-12


class SymmetricOperator:
    """Immutable real symmetric ``p x p`` matrix.

    Use :func:`make_symmetric` to build one from untrusted input. The stored
    array is exactly symmetric and read-only.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: np.ndarray, *, _checked: bool = False):
        arr = np.array(entries, dtype=float, copy=True)
        if not _checked:
            arr = _validated_square(arr)
            _check_symmetric(arr)
        arr = 0.5 * (arr + arr.T)
        arr.flags.writeable = False
        self._entries = arr

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "SymmetricOperator":
        # internal constructor: skips validation, still symmetrizes
        return cls(arr, _checked=True)

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._entries.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._entries
        return self._entries.astype(dtype)

    def __repr__(self) -> str:
        return f"SymmetricOperator(dim={self.dim})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymmetricOperator):
            return NotImplemented
        return bool(np.array_equal(self._entries, other._entries))

    __hash__ = None

    def __add__(self, other):
        return SymmetricOperator._trusted(self._entries + _as_array(other))

    def __sub__(self, other):
        return SymmetricOperator._trusted(self._entries - _as_array(other))

    def __neg__(self):
        return SymmetricOperator._trusted(-self._entries)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SymmetricOperator._trusted(float(scalar) * self._entries)

    __rmul__ = __mul__

    def __matmul__(self, other):
        # product of two symmetric matrices is generally not symmetric
        return self._entries @ _as_array(other)

    def __rmatmul__(self, other):
        return _as_array(other) @ self._entries


OperatorLike = Union[SymmetricOperator, np.ndarray]


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in non-increasing order with matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _as_array(a) -> np.ndarray:
    if isinstance(a, SymmetricOperator):
        return a.entries
    return np.asarray(a, dtype=float)


def _validated_square(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise NonSquareError(f"expected a square matrix, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise NonSquareError("matrix must have dim >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix contains non-finite entries")
    return arr


def _scale(arr: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(arr)))) if arr.size else 1.0


def _check_symmetric(arr: np.ndarray) -> None:
    asym = float(np.max(np.abs(arr - arr.T)))
    if asym > SYMMETRY_TOL * _scale(arr):
        raise AsymmetricInputError(
            f"max asymmetry {asym:.3e} exceeds tolerance {SYMMETRY_TOL:g} (relative)"
        )


def make_symmetric(raw) -> SymmetricOperator:
    """Validate ``raw`` and return it as an exactly symmetric operator.

    Raises
    ------
    NonSquareError
        If ``raw`` is not a square 2-d array.
    AsymmetricInputError
        If ``raw`` deviates from symmetry by more than roundoff.
    """
    if isinstance(raw, SymmetricOperator):
        return raw
    return SymmetricOperator(np.asarray(raw, dtype=float))


def as_operator(a) -> SymmetricOperator:
    return make_symmetric(a)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # first nonzero component of each column made positive
    if vecs.size == 0:
        return vecs
    nz = np.abs(vecs) > 1e-14
    first = np.argmax(nz, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigh(a: OperatorLike) -> EigenDecomposition:
    """Full symmetric eigendecomposition, eigenvalues sorted non-increasing."""
    arr = _as_array(as_operator(a))
    try:
        w, v = scipy.linalg.eigh(arr, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    w = w[::-1].copy()
    v = _fix_signs(v[:, ::-1])
    return EigenDecomposition(eigenvalues=w, eigenvectors=v)


def top_eigh(a: OperatorLike, k: int) -> EigenDecomposition:
    """The ``k`` largest eigenpairs of ``a`` (non-increasing order)."""
    arr = _as_array(a)
    p = arr.shape[0]
    if not 1 <= k <= p:
        raise ValidationError(f"k must be in [1, {p}], got {k}")
    try:
        w, v = scipy.linalg.eigh(arr, subset_by_index=[p - k, p - 1], check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return EigenDecomposition(eigenvalues=w[::-1].copy(), eigenvectors=_fix_signs(v[:, ::-1]))


def eigvalsh(a: OperatorLike) -> np.ndarray:
    """Eigenvalues only, sorted non-increasing."""
    try:
        w = scipy.linalg.eigh(_as_array(a), eigvals_only=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return w[::-1].copy()


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes {a.shape} and {b.shape} differ")


def op_norm(a: OperatorLike) -> float:
    """Operator (spectral) norm, the largest absolute eigenvalue."""
    w = eigvalsh(a)
    return float(max(abs(w[0]), abs(w[-1])))


def hs_norm(a: OperatorLike) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(_as_array(a)))


def trace(a: OperatorLike) -> float:
    return float(np.trace(_as_array(a)))


def hs_inner(a: OperatorLike, b: OperatorLike) -> float:
    """Hilbert-Schmidt inner product ``sum_ij a_ij b_ij``."""
    x, y = _as_array(a), _as_array(b)
    _check_same_shape(x, y)
    return float(np.vdot(x, y))


def lowrank_eigvals(u: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Nonzero spectrum of ``u @ core @ u.T`` without forming the ``p x p`` matrix.

    ``core`` must be symmetric and ``u`` of shape ``(p, k)`` with small ``k``.
    """
    q, r = np.linalg.qr(u)
    small = r @ core @ r.T
    return np.linalg.eigvalsh(0.5 * (small + small.T))


def lowrank_op_norm(u: np.ndarray, core: np.ndarray) -> float:
    w = lowrank_eigvals(u, core)
    return float(np.max(np.abs(w))) if w.size else 0.0


def read_matrix_csv(path) -> SymmetricOperator:
    """Read a headerless CSV with one matrix row per line."""
    rows = read_numeric_csv(path)
    if len(rows) != len(rows[0]):
        raise NonSquareError(f"{path}: {len(rows)} rows but {len(rows[0])} columns")
    return make_symmetric(np.array(rows, dtype=float))


def read_numeric_csv(path) -> list[list[float]]:
    """Parse a headerless numeric CSV, rejecting ragged or non-numeric rows.

    Raises
    ------
    ValidationError
        With the offending 1-based line number in the message.
    """
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric entry ({exc})") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ValidationError(
                    f"{path}:{lineno}: expected {width} columns, found {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows


def write_matrix_csv(path, a: OperatorLike) -> None:
    arr = _as_array(a)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([repr(float(x)) for x in row])
