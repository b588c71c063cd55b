"""Data-generating processes: mixture signals, covariance structures and noise laws."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._validation import as_matrix, as_symmetric, check_positive_int
from .exceptions import DimensionError, SpecError
from .matkernel import psd_sqrt, sym_eig
from .rmtlimits import EquivalentModel

T8_SCALE = np.sqrt(8.0 / 6.0)


def make_rng(seed, *stream):
    """Counter-based generator for ``(seed, *stream)``.

    Streams built from distinct tuples are statistically independent, so a
    replication's draws do not depend on how replications are scheduled.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass
class MixtureSpec:
    """Cluster means (rows of ``means``, unscaled) and cluster fractions."""

    p: int
    n: int
    means: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        self.p = check_positive_int(self.p, "p")
        self.n = check_positive_int(self.n, "n")
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.fractions = np.asarray(self.fractions, dtype=float).ravel()
        if self.means.shape != (self.fractions.size, self.p):
            raise DimensionError(f"means must be K x p = {self.fractions.size} x {self.p}, "
                                 f"got {self.means.shape}")
        if np.any(self.fractions <= 0) or abs(self.fractions.sum() - 1) > 1e-9:
            raise SpecError("fractions must be positive and sum to 1")

    @property
    def K(self):
        return self.fractions.size

    def cluster_sizes(self):
        """Floor of ``fraction * n`` per cluster with the remainder added to the last."""
        sizes = np.floor(self.fractions * self.n + 1e-9).astype(int)
        sizes[-1] += self.n - sizes.sum()
        if np.any(sizes < 1):
            raise SpecError(f"cluster sizes {sizes.tolist()} leave a cluster empty at n={self.n}")
        return sizes


def build_signal(spec):
    """Signal matrix ``A`` (columns ``mu_label / sqrt(n)``) and contiguous 0-based labels."""
    labels = np.repeat(np.arange(spec.K), spec.cluster_sizes())
    A = spec.means[labels].T / np.sqrt(spec.n)
    return A, labels


class CovKind(str, Enum):
    IDENTITY = "identity"
    TOEPLITZ = "toeplitz"
    TOEPLITZ_PLUS_SPIKE = "toeplitz_plus_spike"
    CUSTOM = "custom"


@dataclass
class CovarianceSpec:
    """Noise covariance recipe.

    ``position`` is 1-based: ``ToeplitzPlusSpike(0.4, 6, 3)`` adds 6 to the
    third diagonal entry.
    """

    kind: CovKind = CovKind.IDENTITY
    rho: float = 0.0
    excess: float = 0.0
    position: int = 1
    matrix: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = CovKind(self.kind)
        if not -1 < self.rho < 1:
            raise SpecError(f"|rho| must be < 1, got {self.rho}")
        if self.excess < 0:
            raise SpecError("excess must be non-negative")

    @classmethod
    def identity(cls):
        return cls(CovKind.IDENTITY)

    @classmethod
    def toeplitz(cls, rho):
        return cls(CovKind.TOEPLITZ, rho=rho)

    @classmethod
    def toeplitz_plus_spike(cls, rho, excess, position):
        return cls(CovKind.TOEPLITZ_PLUS_SPIKE, rho=rho, excess=excess, position=position)

    @classmethod
    def custom(cls, matrix):
        return cls(CovKind.CUSTOM, matrix=np.asarray(matrix, dtype=float))


def toeplitz_matrix(rho, p):
    idx = np.arange(p)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :])


def build_covariance(spec, p):
    p = check_positive_int(p, "p")
    if spec.kind is CovKind.IDENTITY:
        return np.eye(p)
    if spec.kind is CovKind.TOEPLITZ:
        return toeplitz_matrix(spec.rho, p)
    if spec.kind is CovKind.TOEPLITZ_PLUS_SPIKE:
        if not 1 <= spec.position <= p:
            raise SpecError(f"spike position {spec.position} outside 1..{p}")
        S = toeplitz_matrix(spec.rho, p)
        S[spec.position - 1, spec.position - 1] += spec.excess
        return S
    S = as_symmetric(spec.matrix, "Sigma")
    if S.shape != (p, p):
        raise DimensionError(f"custom Sigma is {S.shape}, expected {(p, p)}")
    psd_sqrt(S)  # raises NotPSDError
    return S


class NoiseLaw(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T8 = "student_t8"
    RADEMACHER = "rademacher"
    CHISQUARE3 = "chisquare3"


def sample_noise(law, p, n, rng):
    """``p x n`` noise with i.i.d. standardized entries scaled by ``1/sqrt(n)``."""
    law = NoiseLaw(law)
    shape = (p, n)
    if law is NoiseLaw.GAUSSIAN:
        Z = rng.standard_normal(shape)
    elif law is NoiseLaw.STUDENT_T8:
        Z = rng.standard_t(8, shape) / T8_SCALE
    elif law is NoiseLaw.RADEMACHER:
        Z = rng.integers(0, 2, shape) * 2.0 - 1.0
    else:
        Z = (rng.chisquare(3, shape) - 3.0) / np.sqrt(6.0)
    return Z / np.sqrt(n)


def assemble(A, Sigma, W, centered=False, sigma_root=None):
    """``X = A + Sigma^{1/2} W``, optionally with the column mean removed.

    ``sigma_root`` may carry a precomputed ``Sigma^{1/2}`` (``Sigma`` is then
    ignored); ``Sigma=None`` means the identity.
    """
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    if A.shape != W.shape:
        raise DimensionError(f"A is {A.shape} but W is {W.shape}")
    if sigma_root is None and Sigma is not None:
        sigma_root = psd_sqrt(Sigma)
    if sigma_root is not None and sigma_root.shape != (A.shape[0], A.shape[0]):
        raise DimensionError(f"Sigma must be {A.shape[0]} x {A.shape[0]}")
    X = A + (W if sigma_root is None else sigma_root @ W)
    if centered:
        X = X - X.mean(axis=1, keepdims=True)
    return X


@dataclass
class LabeledSample:
    X: np.ndarray
    labels: np.ndarray
    A: np.ndarray


def population_model(A, Sigma, centered=False):
    """Population matrix ``R`` and its grouped spectrum for a signal/covariance pair."""
    return EquivalentModel.build(as_matrix(A, "A"), Sigma, centered)


def spiked_direction(p, g1):
    """Unit vector with first coordinate ``g1`` and the rest of its mass on ``e_2``."""
    g = np.zeros(p)
    g[0] = g1
    g[1] = np.sqrt(max(0.0, 1.0 - g1 * g1))
    return g


def right_singular_basis(p, n, k, rng):
    """``k`` orthonormal directions in ``R^n`` taken from a Gaussian matrix's right singular vectors."""
    G = rng.standard_normal((p, n))
    vectors = sym_eig(G.T @ G).vectors[:, :k]
    return vectors


# ---------------------------------------------------------------------------
# presets


@dataclass
class ModelSpec:
    """A named simulation setting: mixture, noise covariance and true cluster count."""

    mixture: MixtureSpec
    covariance: CovarianceSpec
    K: int
    name: str = ""

    @property
    def p(self):
        return self.mixture.p

    @property
    def n(self):
        return self.mixture.n


def _unit_means(p, scale, K=3):
    means = np.zeros((K, p))
    means[np.arange(K), np.arange(K)] = scale
    return means


def _case2_means(p, a):
    head = np.array([[2, 1, -1, 1], [1, 1, 2, -3], [1, -2, -1, 1], [-2, 1, 1, 1]], float) * a
    means = np.ones((4, p))
    means[:, :4] = head
    return means


CASE_FRACTIONS_3 = (0.3, 0.3, 0.4)
CASE_FRACTIONS_4 = (0.3, 0.2, 0.3, 0.2)


def case_preset(case_id, p, n):
    """The eight benchmark mixtures, indexed 1..8."""
    p = check_positive_int(p, "p")
    n = check_positive_int(n, "n")
    if p < 4:
        raise SpecError("the presets need p >= 4")
    toeplitz = CovarianceSpec.toeplitz(0.2)
    if case_id == 1:
        means, fr, cov = _unit_means(p, 3.0), CASE_FRACTIONS_3, CovarianceSpec.identity()
    elif case_id in (2, 4):
        # the fourth setting restates the second with the same Toeplitz noise
        means, fr, cov = _case2_means(p, np.sqrt(p / 10)), CASE_FRACTIONS_4, toeplitz
    elif case_id == 3:
        head = np.array([[5, 0, -4, 0], [0, 4, 0, -6], [0, -5, -5, 0], [-6, 0, 0, 6]], float)
        means = np.zeros((4, p))
        means[:, :4] = head
        fr, cov = CASE_FRACTIONS_4, toeplitz
    elif case_id == 5:
        means = np.zeros((3, p))
        means[:, :3] = [[5, 0, 0], [0, 6, 0], [-2, 0, 4]]
        fr, cov = CASE_FRACTIONS_3, toeplitz
    elif case_id == 6:
        means, fr, cov = _unit_means(p, 4.0), CASE_FRACTIONS_3, CovarianceSpec.identity()
    elif case_id == 7:
        means, fr, cov = _unit_means(p, 4.0), CASE_FRACTIONS_3, toeplitz
    elif case_id == 8:
        means, fr, cov = _case2_means(p, np.sqrt(n / 10)), CASE_FRACTIONS_4, toeplitz
    else:
        raise SpecError(f"unknown case {case_id!r}; expected 1..8")
    mixture = MixtureSpec(p, n, means, np.array(fr))
    return ModelSpec(mixture, cov, mixture.K, name=f"case{case_id}")


def draw_sample(model, noise, rng, centered=False, sigma_root=None):
    """One labeled replication of a :class:`ModelSpec`."""
    A, labels = build_signal(model.mixture)
    if sigma_root is None:
        sigma_root = psd_sqrt(build_covariance(model.covariance, model.p))
    W = sample_noise(noise, model.p, model.n, rng)
    return LabeledSample(assemble(A, None, W, centered, sigma_root=sigma_root), labels, A)
