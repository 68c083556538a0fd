"""Affine matrix expressions in named matrix variables.

A :class:`MatrixExpression` is ``C + sum_k x_k M_k`` where the scalars ``x_k``
are the free entries of one or more :class:`Variable` objects.  Only the
operations needed to write the observer LMIs are supported: sums, scaling,
multiplication by constant matrices, transposition, Kronecker products with
constant matrices, slicing and block assembly.  Multiplying two expressions
raises :class:`~rrhinf.errors.NonAffineExpression`.

The same block builders are used with plain numpy arrays (numeric
evaluation) and with expressions (program assembly), so helpers such as
:func:`bmat` and :func:`kron` accept either.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import DimensionMismatch, NonAffineExpression


class Variable:
    """A named matrix decision variable.

    Symmetric variables are parameterised by their lower triangle (row-major
    order of ``np.tril_indices``); general variables by all entries in
    row-major order.
    """

    def __init__(self, name: str, shape: tuple[int, int], symmetric: bool = False):
        r, c = int(shape[0]), int(shape[1])
        if symmetric and r != c:
            raise DimensionMismatch(f"symmetric variable {name} must be square, got {shape}")
        self.name = name
        self.shape = (r, c)
        self.symmetric = symmetric

    @property
    def size(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c

    def basis(self) -> np.ndarray:
        """Basis matrices, shape ``(size, rows, cols)``."""
        r, c = self.shape
        out = np.zeros((self.size, r, c))
        if self.symmetric:
            rows, cols = np.tril_indices(r)
            k = np.arange(self.size)
            out[k, rows, cols] = 1.0
            out[k, cols, rows] = 1.0
        else:
            out.reshape(self.size, -1)[np.arange(self.size), np.arange(self.size)] = 1.0
        return out

    def to_vector(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float).reshape(self.shape)
        if self.symmetric:
            return value[np.tril_indices(self.shape[0])].copy()
        return value.ravel().copy()

    def from_vector(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise DimensionMismatch(f"{self.name}: expected {self.size} entries, got {vec.shape}")
        if self.symmetric:
            m = np.zeros(self.shape)
            m[np.tril_indices(self.shape[0])] = vec
            return m + np.tril(m, -1).T
        return vec.reshape(self.shape).copy()

    @property
    def expr(self) -> "MatrixExpression":
        return MatrixExpression(np.zeros(self.shape), {self.name: self.basis()}, {self.name: self})

    def __repr__(self):
        kind = "sym" if self.symmetric else "full"
        return f"Variable({self.name!r}, {self.shape}, {kind})"


def _is_scalar(x) -> bool:
    return np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)


class MatrixExpression:
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, const, terms: Mapping[str, np.ndarray] | None = None,
                 variables: Mapping[str, Variable] | None = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = dict(terms or {})
        self.variables = dict(variables or {})
        for name, t in self.terms.items():
            if t.shape[1:] != self.const.shape:
                raise DimensionMismatch(f"term {name} has shape {t.shape[1:]}, expected {self.const.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    def __repr__(self):
        return f"MatrixExpression(shape={self.shape}, vars={sorted(self.terms)})"

    # -- arithmetic --------------------------------------------------------
    def _combine(self, other, sign: float) -> "MatrixExpression":
        other = as_expression(other, self.shape)
        if other.shape != self.shape:
            raise DimensionMismatch(f"cannot add {self.shape} and {other.shape}")
        variables = _merge_variables(self.variables, other.variables)
        terms = dict(self.terms)
        for name, t in other.terms.items():
            terms[name] = terms[name] + sign * t if name in terms else sign * t
        return MatrixExpression(self.const + sign * other.const, terms, variables)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __radd__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        if not _is_scalar(other):
            raise NonAffineExpression("use @ for matrix products; * is scalar scaling only")
        a = float(other)
        return MatrixExpression(a * self.const, {k: a * t for k, t in self.terms.items()}, self.variables)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        if isinstance(other, MatrixExpression):
            raise NonAffineExpression("product of two decision-dependent expressions")
        m = np.atleast_2d(np.asarray(other, dtype=float))
        terms = {k: np.einsum("kij,jl->kil", t, m) for k, t in self.terms.items()}
        return MatrixExpression(self.const @ m, terms, self.variables)

    def __rmatmul__(self, other):
        if isinstance(other, MatrixExpression):
            raise NonAffineExpression("product of two decision-dependent expressions")
        m = np.atleast_2d(np.asarray(other, dtype=float))
        terms = {k: np.einsum("ij,kjl->kil", m, t) for k, t in self.terms.items()}
        return MatrixExpression(m @ self.const, terms, self.variables)

    @property
    def T(self) -> "MatrixExpression":
        terms = {k: t.transpose(0, 2, 1) for k, t in self.terms.items()}
        return MatrixExpression(self.const.T, terms, self.variables)

    def __getitem__(self, idx):
        if not (isinstance(idx, tuple) and len(idx) == 2):
            raise TypeError("MatrixExpression indexing needs a (rows, cols) pair")
        const = np.atleast_2d(self.const[idx])
        terms = {k: t[(slice(None),) + idx].reshape((-1,) + const.shape) for k, t in self.terms.items()}
        return MatrixExpression(const, terms, self.variables)

    # -- evaluation ----------------------------------------------------------
    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        """Numeric value given a matrix value for every variable involved."""
        out = self.const.copy()
        for name, t in self.terms.items():
            if name not in values:
                raise KeyError(f"no value for variable {name!r}")
            vec = self.variables[name].to_vector(values[name])
            out += np.tensordot(vec, t, axes=1)
        return out

    def evaluate_vector(self, vecs: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for name, t in self.terms.items():
            out += np.tensordot(vecs[name], t, axes=1)
        return out

    def substitute(self, name: str, value) -> "MatrixExpression":
        """Fix variable ``name`` at ``value``, folding it into the constant."""
        if name not in self.terms:
            return self
        vec = self.variables[name].to_vector(value)
        terms = {k: t for k, t in self.terms.items() if k != name}
        variables = {k: v for k, v in self.variables.items() if k != name}
        return MatrixExpression(self.const + np.tensordot(vec, self.terms[name], axes=1), terms, variables)

    def symmetrized(self) -> "MatrixExpression":
        terms = {k: 0.5 * (t + t.transpose(0, 2, 1)) for k, t in self.terms.items()}
        return MatrixExpression(0.5 * (self.const + self.const.T), terms, self.variables)

    def asymmetry(self) -> float:
        """Largest absolute entry of ``M - M'`` over the constant and all coefficients."""
        if self.shape[0] != self.shape[1]:
            return np.inf
        worst = np.max(np.abs(self.const - self.const.T), initial=0.0)
        for t in self.terms.values():
            worst = max(worst, np.max(np.abs(t - t.transpose(0, 2, 1)), initial=0.0))
        return float(worst)


def _merge_variables(a: Mapping[str, Variable], b: Mapping[str, Variable]) -> dict:
    out = dict(a)
    for name, var in b.items():
        if name in out and out[name] is not var:
            if out[name].shape != var.shape or out[name].symmetric != var.symmetric:
                raise DimensionMismatch(f"variable {name!r} declared twice with different shapes")
        out.setdefault(name, var)
    return out


def as_expression(x, shape: tuple[int, int] | None = None) -> MatrixExpression:
    if isinstance(x, MatrixExpression):
        return x
    if _is_scalar(x) and shape is not None:
        if float(x) != 0.0:
            raise DimensionMismatch("only the scalar 0 is broadcast to a matrix")
        return MatrixExpression(np.zeros(shape))
    return MatrixExpression(np.asarray(x, dtype=float))


def kron(a, b):
    """Kronecker product ``a ⊗ b``; at most one factor may be an expression."""
    if isinstance(a, MatrixExpression) and isinstance(b, MatrixExpression):
        raise NonAffineExpression("Kronecker product of two expressions")
    if isinstance(a, MatrixExpression):
        m = np.atleast_2d(np.asarray(b, dtype=float))
        p, q = a.shape
        r, c = m.shape
        terms = {k: np.einsum("kij,ab->kiajb", t, m).reshape(t.shape[0], p * r, q * c)
                 for k, t in a.terms.items()}
        return MatrixExpression(np.kron(a.const, m), terms, a.variables)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not isinstance(b, MatrixExpression):
        return np.kron(a, np.atleast_2d(b))
    p, q = a.shape
    r, c = b.shape
    terms = {k: np.einsum("ij,kab->kiajb", a, t).reshape(t.shape[0], p * r, q * c)
             for k, t in b.terms.items()}
    return MatrixExpression(np.kron(a, b.const), terms, b.variables)


def bmat(blocks) -> np.ndarray | MatrixExpression:
    """Block matrix from a nested list.

    ``None`` entries are zero blocks whose size is inferred from the rest of
    their row and column.  Returns a numpy array unless some block is a
    :class:`MatrixExpression`.
    """
    nrows, ncols = len(blocks), len(blocks[0])
    heights = [None] * nrows
    widths = [None] * ncols
    for i, row in enumerate(blocks):
        if len(row) != ncols:
            raise DimensionMismatch("ragged block matrix")
        for j, blk in enumerate(row):
            if blk is None:
                continue
            h, w = (blk.shape if isinstance(blk, MatrixExpression)
                    else np.atleast_2d(np.asarray(blk)).shape)
            if heights[i] not in (None, h) or widths[j] not in (None, w):
                raise DimensionMismatch(f"block ({i},{j}) has shape {(h, w)}, "
                                        f"expected {(heights[i], widths[j])}")
            heights[i], widths[j] = h, w
    if None in heights or None in widths:
        raise DimensionMismatch("cannot infer the size of an all-empty block row/column")

    row_off = np.concatenate([[0], np.cumsum(heights)])
    col_off = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((row_off[-1], col_off[-1]))
    variables: dict[str, Variable] = {}
    pieces = []
    for i, row in enumerate(blocks):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            rs = slice(row_off[i], row_off[i + 1])
            cs = slice(col_off[j], col_off[j + 1])
            if isinstance(blk, MatrixExpression):
                const[rs, cs] = blk.const
                variables = _merge_variables(variables, blk.variables)
                pieces.append((rs, cs, blk))
            else:
                const[rs, cs] = np.atleast_2d(np.asarray(blk, dtype=float))
    if not pieces:
        return const
    terms: dict[str, np.ndarray] = {}
    for rs, cs, blk in pieces:
        for name, t in blk.terms.items():
            if name not in terms:
                terms[name] = np.zeros((variables[name].size,) + const.shape)
            terms[name][:, rs, cs] += t
    return MatrixExpression(const, terms, variables)
