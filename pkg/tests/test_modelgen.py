import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sigplusnoise.exceptions import DimensionError, NotPSDError, SpecError
from sigplusnoise.modelgen import (CovarianceSpec, MixtureSpec, NoiseLaw, assemble,
                                   build_covariance, build_signal, case_preset, draw_sample,
                                   make_rng, population_model, right_singular_basis,
                                   sample_noise, spiked_direction, toeplitz_matrix)


def test_toeplitz_entries():
    S = build_covariance(CovarianceSpec.toeplitz(0.2), 5)
    assert S[0, 2] == pytest.approx(0.04)
    assert S[4, 0] == pytest.approx(0.2 ** 4)
    np.testing.assert_array_equal(np.diag(S), 1.0)


def test_toeplitz_plus_spike():
    S = build_covariance(CovarianceSpec.toeplitz_plus_spike(0.4, 6, 3), 5)
    assert S[2, 2] == pytest.approx(7.0)
    assert S[0, 0] == 1.0
    with pytest.raises(SpecError):
        build_covariance(CovarianceSpec.toeplitz_plus_spike(0.4, 6, 9), 5)


def test_covariance_validation():
    with pytest.raises(SpecError):
        CovarianceSpec.toeplitz(1.0)
    with pytest.raises(NotPSDError):
        build_covariance(CovarianceSpec.custom([[1, 2], [2, 1]]), 2)
    with pytest.raises(DimensionError):
        build_covariance(CovarianceSpec.custom(np.eye(3)), 2)


@pytest.mark.parametrize("law", list(NoiseLaw))
def test_noise_standardized(law):
    Z = sample_noise(law, 200, 500, make_rng(3, 1)) * np.sqrt(500)
    assert abs(Z.mean()) < 0.01
    assert abs(Z.var() - 1) < 0.02


def test_rademacher_and_chisquare_shapes():
    Z = sample_noise(NoiseLaw.RADEMACHER, 10, 16, make_rng(0)) * 4
    assert set(np.unique(Z)) == {-1.0, 1.0}
    C = sample_noise(NoiseLaw.CHISQUARE3, 400, 500, make_rng(1)).ravel()
    assert abs(stats.skew(C) - np.sqrt(8 / 3)) < 0.05


def test_mixture_sizes_and_labels():
    spec = MixtureSpec(4, 10, np.eye(3, 4), [0.3, 0.3, 0.4])
    np.testing.assert_array_equal(spec.cluster_sizes(), [3, 3, 4])
    A, labels = build_signal(spec)
    assert A.shape == (4, 10)
    np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    np.testing.assert_allclose(A[:, 0], np.eye(4)[0] / np.sqrt(10))


def test_mixture_errors():
    with pytest.raises(SpecError):
        MixtureSpec(4, 3, np.eye(3, 4), [0.1, 0.1, 0.8]).cluster_sizes()
    with pytest.raises(SpecError):
        MixtureSpec(4, 10, np.eye(2, 4), [0.5, 0.6])
    with pytest.raises(DimensionError):
        MixtureSpec(4, 10, np.eye(2, 3), [0.5, 0.5])


def test_case_one_population_spectrum():
    m = case_preset(1, 150, 450)
    A, _ = build_signal(m.mixture)
    model = population_model(A, build_covariance(m.covariance, 150))
    assert m.K == 3
    atoms = model.measure.atoms
    assert [round(v, 9) for v, _ in atoms] == [4.6, 3.7, 1.0]
    assert [k for _, k in atoms] == [1, 2, 147]


def test_case_presets_shapes():
    for case in range(1, 9):
        m = case_preset(case, 40, 60)
        A, labels = build_signal(m.mixture)
        assert A.shape == (40, 60) and labels.max() + 1 == m.K
    np.testing.assert_array_equal(case_preset(2, 20, 40).mixture.means,
                                  case_preset(4, 20, 40).mixture.means)
    with pytest.raises(SpecError):
        case_preset(9, 40, 60)
    with pytest.raises(SpecError):
        case_preset(1, 3, 60)


def test_spiked_covariance_spectrum():
    p = 50
    g = spiked_direction(p, 1.0)
    R = 4 * np.outer(g, g) + build_covariance(CovarianceSpec.toeplitz_plus_spike(0.0, 2, 1), p)
    model = population_model(np.zeros((p, 10)), R)
    assert [(round(v, 9), k) for v, k in model.measure.atoms] == [(7.0, 1), (1.0, p - 1)]


def test_assemble_identities():
    rng = make_rng(5)
    A = rng.standard_normal((4, 6))
    W = rng.standard_normal((4, 6))
    S = toeplitz_matrix(0.3, 4)
    np.testing.assert_allclose(assemble(A, None, W), A + W)
    X = assemble(A, S, W)
    evals, evecs = np.linalg.eigh(S)
    np.testing.assert_allclose(X, A + evecs @ np.diag(np.sqrt(evals)) @ evecs.T @ W, atol=1e-12)
    Xc = assemble(A, S, W, centered=True)
    np.testing.assert_allclose(Xc.mean(axis=1), 0, atol=1e-12)
    with pytest.raises(DimensionError):
        assemble(A, None, W[:, :3])


def test_seeded_determinism():
    m = case_preset(3, 30, 50)
    a = draw_sample(m, NoiseLaw.STUDENT_T8, make_rng(7, 2))
    b = draw_sample(m, NoiseLaw.STUDENT_T8, make_rng(7, 2))
    c = draw_sample(m, NoiseLaw.STUDENT_T8, make_rng(7, 3))
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_right_singular_basis_orthonormal():
    V = right_singular_basis(10, 30, 3, make_rng(0))
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1))
def test_spiked_direction_unit(g1):
    g = spiked_direction(8, g1)
    assert abs(np.linalg.norm(g) - 1) < 1e-12 and g[0] == g1
