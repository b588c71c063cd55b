"""Dense real symmetric linear algebra used by every other module.

All eigen-decompositions are returned in descending order, which is the
indexing convention of the spiked-eigenvalue results (largest first).
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._validation import as_matrix, as_symmetric
from .exceptions import NotPSDError, NumericError

QL_MAX_SWEEPS = 64
PSD_TOL = 1e-10


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class SymEigResult:
    """Descending eigenvalues and matching orthonormal eigenvectors (as columns)."""

    values: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        yield self.values
        yield self.vectors

    def top(self, k):
        return SymEigResult(self.values[:k], self.vectors[:, :k])


def _descending(values, vectors):
    # stable sort keeps solver order on ties
    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def _tred2(V):
    """Householder reduction of a symmetric matrix to tridiagonal form.

    Works in place on ``V``; on return ``V`` holds the accumulated orthogonal
    transformation, ``d`` the diagonal and ``e`` the sub-diagonal (``e[0] = 0``).
    """
    n = V.shape[0]
    d = V[n - 1, :].copy()
    e = np.zeros(n)
    for i in range(n - 1, 0, -1):
        scale = np.sum(np.abs(d[:i]))
        h = 0.0
        if scale == 0.0:
            e[i] = d[i - 1]
            d[:i] = V[i - 1, :i]
            V[i, :i] = 0.0
            V[:i, i] = 0.0
        else:
            d[:i] /= scale
            h = float(d[:i] @ d[:i])
            f = d[i - 1]
            g = np.sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h -= f * g
            d[i - 1] = f - g
            V[:i, i] = d[:i]
            low = np.tril(V[:i, :i])
            sym = low + low.T - np.diag(np.diag(low))
            e[:i] = sym @ d[:i]
            e[:i] /= h
            f = float(e[:i] @ d[:i])
            hh = f / (h + h)
            e[:i] -= hh * d[:i]
            update = np.outer(e[:i], d[:i]) + np.outer(d[:i], e[:i])
            V[:i, :i] -= np.tril(update)
            d[:i] = V[i - 1, :i]
            V[i, :i] = 0.0
        d[i] = h

    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            col = V[: i + 1, i + 1]
            dd = col / h
            g = col @ V[: i + 1, : i + 1]
            V[: i + 1, : i + 1] -= np.outer(dd, g)
        V[: i + 1, i + 1] = 0.0
    d = V[n - 1, :].copy()
    V[n - 1, :] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0
    return d, e


def _tql2(d, e, V):
    """Implicit-shift QL on a tridiagonal matrix, accumulating into ``V``."""
    n = d.size
    e[:-1] = e[1:].copy()
    e[-1] = 0.0
    f = 0.0
    tst1 = 0.0
    eps = np.finfo(float).eps
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1 and abs(e[m]) > eps * tst1:
            m += 1
        if m > l:
            sweeps = 0
            while True:
                sweeps += 1
                if sweeps > QL_MAX_SWEEPS:
                    raise NumericError(
                        f"QL iteration did not converge for eigenvalue index {l} "
                        f"after {QL_MAX_SWEEPS} sweeps")
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = np.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                d[l + 2:] -= h
                f += h

                p = d[m]
                c = c2 = c3 = 1.0
                el1 = e[l + 1]
                s = s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = np.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    left = V[:, i].copy()
                    right = V[:, i + 1].copy()
                    V[:, i + 1] = s * left + c * right
                    V[:, i] = c * left - s * right
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] += f
        e[l] = 0.0
    return d, V


def householder_ql(M):
    """Eigen-decomposition by Householder tridiagonalization and implicit QL."""
    V = np.array(M, dtype=np.float64, copy=True)
    if V.shape[0] == 1:
        return V[0].copy(), np.ones((1, 1))
    d, e = _tred2(V)
    d, V = _tql2(d, e, V)
    return d, V


def sym_eig(M, method="lapack"):
    """Full eigen-decomposition of a real symmetric matrix, eigenvalues descending.

    ``method="lapack"`` calls ``numpy.linalg.eigh``; ``method="householder_ql"``
    uses the in-package Householder/QL routine (slower, no external solver).
    """
    A = as_symmetric(M, "M")
    A = 0.5 * (A + A.T)
    if method == "lapack":
        try:
            values, vectors = np.linalg.eigh(A)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigh failed: {exc}") from exc
    elif method == "householder_ql":
        values, vectors = householder_ql(A)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SymEigResult(*_descending(values, vectors))


def sym_eigvals(M):
    """Descending eigenvalues only (no symmetry check, for hot loops)."""
    return np.linalg.eigvalsh(M)[::-1]


def gram(X, side=Side.LEFT):
    """``X X^T`` (left, p x p) or ``X^T X`` (right, n x n)."""
    X = as_matrix(X, "X")
    side = Side(side)
    G = X @ X.T if side is Side.LEFT else X.T @ X
    return 0.5 * (G + G.T)


def psd_sqrt(S, tol=PSD_TOL):
    """Symmetric square root of a PSD matrix.

    Eigenvalues in ``[-tol*||S||, 0)`` are clamped to zero; anything more
    negative raises NotPSDError.
    """
    values, vectors = sym_eig(S)
    norm = max(abs(values[0]), abs(values[-1]))
    if values[-1] < -tol * max(norm, 1e-300):
        raise NotPSDError(f"smallest eigenvalue {values[-1]:.3g} is below -{tol:g}*||S||")
    root = np.sqrt(np.clip(values, 0.0, None))
    Q = (vectors * root) @ vectors.T
    return 0.5 * (Q + Q.T)


