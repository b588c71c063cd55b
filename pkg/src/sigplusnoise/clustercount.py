"""Eigenvalue-difference criteria for the number of clusters.

Given descending sample eigenvalues ``lam`` of ``X X^T`` (p x p) the criteria
trade the eigen-gap ``lam_1 - lam_{k+1}`` against the spread of the remaining
gaps, ``theta_i = exp(lam_i - lam_{i+1})``, plus a penalty linear in ``k``.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_descending, check_positive_int
from .exceptions import ClassificationError, DimensionError, SpecError
from .matkernel import sym_eigvals
from .rmtlimits import bulk_edge, classical_locations, classify_spike

OVERFLOW_GAP = 350.0
ZERO_TAIL_TOL = 1e-10


class Criterion(str, Enum):
    EDA = "EDA"
    EDB = "EDB"
    PSEUDO_EDA = "pEDA"
    PSEUDO_EDB = "pEDB"

    @property
    def pseudo(self):
        return self in (Criterion.PSEUDO_EDA, Criterion.PSEUDO_EDB)

    @property
    def is_b(self):
        return self in (Criterion.EDB, Criterion.PSEUDO_EDB)


@dataclass(frozen=True)
class EigenvalueSeq:
    """Descending eigenvalues of the p x p sample matrix; zero-padded when p > n."""

    values: np.ndarray
    p: int
    n: int

    def __post_init__(self):
        vals = check_descending(self.values, "eigenvalues")
        p = check_positive_int(self.p, "p")
        n = check_positive_int(self.n, "n")
        if vals.size != p:
            if vals.size == min(p, n) and p > n:
                vals = np.concatenate([vals, np.zeros(p - n)])
            else:
                raise DimensionError(f"expected {p} eigenvalues, got {vals.size}")
        if p > n:
            tail = vals[n:]
            if np.any(np.abs(tail) > ZERO_TAIL_TOL * max(1.0, abs(vals[0]))):
                raise SpecError("with p > n the trailing p - n eigenvalues must vanish")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_data(cls, X):
        """Eigenvalues of ``X X^T`` for a p x n data matrix."""
        X = np.asarray(X, dtype=float)
        p, n = X.shape
        small = X @ X.T if p <= n else X.T @ X
        vals = np.clip(sym_eigvals(0.5 * (small + small.T)), 0.0, None)
        return cls(vals, p, n)

    @property
    def c(self):
        return self.p / self.n


def _dim(lam, pseudo):
    return lam.n if pseudo else lam.p


def theta_stats(lam, k, pseudo=False):
    """``theta_i`` for all ``i`` and ``log theta~`` for cut ``k``.

    Returns ``(log_theta, log_theta_tilde, overflow)`` where ``log_theta[i-1] =
    lam_i - lam_{i+1}`` for ``i = 1..m-1`` (``m = p``, or ``n`` when pseudo) and
    ``log_theta_tilde = log mean_{i=k+1..m-1} theta_i^2``.
    """
    m = _dim(lam, pseudo)
    if not 1 <= k or k + 1 >= m:
        raise SpecError(f"k={k} needs k + 1 < {m}")
    gaps = -np.diff(lam.values[:m])
    tail = 2.0 * gaps[k:]
    log_tilde = float(logsumexp(tail) - np.log(tail.size))
    return gaps, log_tilde, bool(np.any(gaps[k:] > OVERFLOW_GAP))


@dataclass
class CriterionResult:
    """Criterion values divided by ``n`` for ``k = 1..w`` and their argmin."""

    kind: Criterion
    values: np.ndarray
    k_hat: int
    w: int
    overflow: bool = False
    capped: bool = False


def _criterion(lam, w, kind):
    kind = Criterion(kind)
    m = _dim(lam, kind.pseudo)
    w = check_positive_int(w, "w")
    if w + 1 >= m:
        raise SpecError(f"w={w} too large: need w + 1 < {m}")
    if not kind.pseudo and lam.p > lam.n:
        raise SpecError("EDA/EDB need p <= n; use the pseudo variants")
    p, n = lam.p, lam.n
    lam1 = lam.values[0]
    values = np.empty(w)
    overflow = False
    for k in range(1, w + 1):
        _, log_tilde, flag = theta_stats(lam, k, kind.pseudo)
        overflow |= flag
        drop = lam1 - lam.values[k]
        spread = n * (m - k - 1) * log_tilde
        if kind.is_b:
            values[k - 1] = -n * np.log(p) * drop + spread + np.log(n) * p * k
        else:
            values[k - 1] = -n * drop + spread + 2.0 * p * k
    values /= n
    k_hat = int(np.argmin(values)) + 1  # first minimum: ties go to the smaller k
    return CriterionResult(kind, values, k_hat, w, overflow)


def eda(lam, w):
    """``EDA_k / n`` for ``k = 1..w`` and the minimizing ``k``."""
    return _criterion(lam, w, Criterion.EDA)


def edb(lam, w):
    return _criterion(lam, w, Criterion.EDB)


def pseudo_eda(lam, w):
    """EDA with the spread term taken over the first ``n`` eigenvalues (for ``p > n``)."""
    return _criterion(lam, w, Criterion.PSEUDO_EDA)


def pseudo_edb(lam, w):
    return _criterion(lam, w, Criterion.PSEUDO_EDB)


CRITERIA = {Criterion.EDA: eda, Criterion.EDB: edb,
            Criterion.PSEUDO_EDA: pseudo_eda, Criterion.PSEUDO_EDB: pseudo_edb}


def default_w(n):
    n = check_positive_int(n, "n")
    return int(np.floor(6.0 * n ** 0.1))


# ---------------------------------------------------------------------------
# theoretical gap conditions


def spike_limits(model, K):
    """Limits of the top ``K`` sample eigenvalues (all must be distant spikes)."""
    H = model.measure
    gammas = H.expand()[:K]
    limits = np.empty(K)
    for i, g in enumerate(gammas):
        cls = classify_spike(g, H, model.c)
        if not cls.is_distant:
            raise ClassificationError(f"spike {i + 1} (gamma={g:.6g}) is close, not distant")
        limits[i] = cls.phi_value
    return limits


def zeta_limits(model, K, location="edge"):
    """Limits ``zeta_1..zeta_K`` of ``theta_1..theta_K``.

    ``zeta_k = exp(phi(gamma_k) - phi(gamma_{k+1}))`` for ``k < K`` and
    ``zeta_K = exp(phi(gamma_K) - mu_{K+1})``. By default ``mu_{K+1}`` is the
    top edge of the bulk left after removing the spikes (its large-``n``
    value); ``location="classical"`` uses the finite-``p`` classical location.
    """
    K = check_positive_int(K, "K")
    limits = spike_limits(model, K)
    H = model.measure
    if location == "edge":
        mu = bulk_edge(H.bulk(H.atoms_covering(K)), model.c)
    elif location == "classical":
        mu = classical_locations(H, model.c, K + 1)
    else:
        raise ValueError(f"unknown location {location!r}")
    nxt = np.append(limits[1:], mu)
    return np.exp(limits - nxt)


@dataclass(frozen=True)
class GapConditionReport:
    zeta: np.ndarray
    a_seq: np.ndarray
    b_seq: np.ndarray
    eda_ok: bool
    edb_ok: bool


def gap_sequences(zeta, p, n):
    """Backward recursions ``a_s, b_s`` for ``s = 2..K`` from ``zeta_2..zeta_K``.

    An empty ``zeta`` (``K = 1``) gives empty sequences and true verdicts.
    """
    zeta = np.asarray(zeta, dtype=float).ravel()
    c = p / n
    log_z = np.log(zeta)
    a_inc = zeta ** 2 + log_z - 2 * c - 1
    b_inc = zeta ** 2 + np.log(p) * log_z - c * np.log(n) - 1
    a_seq = np.cumsum(a_inc[::-1])[::-1]
    b_seq = np.cumsum(b_inc[::-1])[::-1]
    eda_ok = bool(a_seq.size == 0 or a_seq.min() > 0)
    edb_ok = bool(b_seq.size == 0 or b_seq.min() > 0)
    return GapConditionReport(zeta, a_seq, b_seq, eda_ok, edb_ok)


def gap_report(model, K, p=None, n=None, location="edge"):
    p = model.p if p is None else p
    n = model.n if n is None else n
    zeta = zeta_limits(model, K, location)
    return gap_sequences(zeta[1:], p, n)


# ---------------------------------------------------------------------------
# estimator


class ClusterCountEstimator(BaseEstimator):
    """Estimate the number of clusters from the spectrum of the sample matrix.

    Parameters
    ----------
    criterion : {"edb", "eda"}
    pseudo : {"auto", True, False}
        Use the pseudo criteria (spread over the first ``n`` eigenvalues).
        ``"auto"`` switches them on when there are more features than samples.
    w : int or None
        Largest candidate; defaults to ``floor(6 n^0.1)`` capped below the dimension.
    centered : bool
        Remove the feature means before forming the sample matrix.

    ``fit`` takes ``X`` of shape (n_samples, n_features) with the noise at unit
    scale; the sample matrix is ``X^T X / n_samples``.
    """

    def __init__(self, criterion="edb", pseudo="auto", w=None, centered=False):
        self.criterion = criterion
        self.pseudo = pseudo
        self.w = w
        self.centered = centered

    def _kind(self, p, n):
        base = str(self.criterion).lower()
        if base not in ("eda", "edb"):
            raise ValueError(f"criterion must be 'eda' or 'edb', got {self.criterion!r}")
        pseudo = p > n if self.pseudo == "auto" else bool(self.pseudo)
        if not pseudo and p > n:
            raise SpecError("direct criteria need n_features <= n_samples; set pseudo=True")
        return Criterion({("eda", False): "EDA", ("edb", False): "EDB",
                          ("eda", True): "pEDA", ("edb", True): "pEDB"}[(base, pseudo)])

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=3, ensure_min_features=3)
        n, p = X.shape
        data = X.T / np.sqrt(n)
        if self.centered:
            data = data - data.mean(axis=1, keepdims=True)
        lam = EigenvalueSeq.from_data(data)
        kind = self._kind(p, n)
        m = n if kind.pseudo else p
        w = default_w(n) if self.w is None else self.w
        w = min(w, m - 2)
        result = CRITERIA[kind](lam, w)
        self.eigenvalues_ = lam.values
        self.criterion_ = kind
        self.criterion_values_ = result.values
        self.w_ = result.w
        self.n_clusters_ = result.k_hat
        self.n_features_in_ = p
        return self

    def predict(self, X=None):
        """The fitted cluster count (the estimate does not depend on new rows)."""
        check_is_fitted(self, "n_clusters_")
        return self.n_clusters_
