import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from sigplusnoise.exceptions import (DegenerateSpectrumError, DimensionError, DomainError,
                                     PoleError, SpecError)
from sigplusnoise.matkernel import psd_sqrt
from sigplusnoise.modelgen import make_rng, toeplitz_matrix
from sigplusnoise.rmtlimits import (AspectRatio, EquivalentModel, SpectralMeasure, SpikeKind,
                                    best_right_direction, bulk_edge, classical_locations,
                                    classify_spike, density, det_equiv_D_quadform,
                                    det_equiv_tildeD, det_equiv_tildeD_quadform, eta,
                                    interval_mass, left_projection_limit, omega_roots, phi,
                                    phi_prime, projection_coeffs, right_overlap_limit,
                                    solve_coupled_deltas, solve_rtilde, spiked_sigma_two_eigs,
                                    stieltjes_transform, support_endpoints)


def unit_bulk(p):
    return SpectralMeasure.from_atoms([(1.0, p)])


def residual(r, z, H, c):
    t, w = H.values, H.weights
    return abs(z + 1 / r - c * np.sum(w * t / (1 + t * r)))


measures = st.lists(
    st.tuples(st.floats(0.05, 20.0), st.integers(1, 30)), min_size=1, max_size=6,
).map(lambda atoms: {round(v, 6): m for v, m in atoms}).map(
    lambda d: SpectralMeasure.from_atoms(d.items()))


# --- spectral measures -------------------------------------------------------

def test_measure_grouping_from_eigenvalues():
    H = SpectralMeasure.from_eigenvalues([5.0, 1.0 + 1e-12, 1.0, 1.0 - 1e-12, 3.0])
    assert H.atoms == [(5.0, 1), (3.0, 1), (1.0, 3)]
    assert H.p == 5
    np.testing.assert_allclose(H.weights.sum(), 1.0)


def test_measure_validation():
    with pytest.raises(DimensionError):
        SpectralMeasure(np.array([1.0, 2.0]), np.array([1, 1]))
    with pytest.raises(DomainError):
        SpectralMeasure(np.array([-1.0]), np.array([1]))
    with pytest.raises(DimensionError):
        SpectralMeasure(np.array([1.0]), np.array([0]))
    with pytest.raises(DomainError):
        SpectralMeasure.from_eigenvalues([1.0, -0.5])


def test_bulk_and_covering():
    H = SpectralMeasure.from_atoms([(4.6, 1), (3.7, 2), (1.0, 147)])
    assert H.atoms_covering(3) == 2
    assert H.bulk(2).atoms == [(1.0, 147)]
    with pytest.raises(DegenerateSpectrumError):
        H.atoms_covering(2)
    np.testing.assert_array_equal(H.expand()[:4], [4.6, 3.7, 3.7, 1.0])


# --- r~ ------------------------------------------------------------------------

def test_rtilde_quadratic_root():
    sol = solve_rtilde(-1.0, unit_bulk(100), 1.0)
    assert abs(sol.r_tilde - (-1 + np.sqrt(5)) / 2) < 1e-12
    assert sol.residual <= 1e-12 * 2


def test_rtilde_small_c_limits():
    H = unit_bulk(100)
    # the companion transform tends to -1/z, the p x p transform to that of delta_1
    assert abs(solve_rtilde(-1.0, H, 1e-8).r_tilde - 1.0) < 1e-6
    assert abs(stieltjes_transform(-1.0, H, 1e-6) - 0.5) < 1e-5
    assert abs(stieltjes_transform(-1.0, H, 0.0) - 0.5) < 1e-14


def test_rtilde_near_real_axis_outside_support():
    sol = solve_rtilde(4 + 0.01j, unit_bulk(100), 0.5)
    assert sol.residual <= 1e-12 * (1 + abs(sol.z))
    assert sol.r_tilde.imag > 0


def test_rtilde_inside_support_near_axis():
    H = unit_bulk(100)
    sol = solve_rtilde(1.5 + 1e-6j, H, 0.5)
    assert sol.residual <= 1e-12 * 2.5 and sol.r_tilde.imag > 0
    # density of the MP law at x = 1.5
    a, b = (1 - np.sqrt(0.5)) ** 2, (1 + np.sqrt(0.5)) ** 2
    mp = np.sqrt((b - 1.5) * (1.5 - a)) / (2 * np.pi * 0.5 * 1.5)
    assert abs(density(1.5, H, 0.5) - mp) < 1e-6


def test_real_rtilde_matches_upper_limit():
    H = SpectralMeasure.from_atoms([(5, 1), (2, 10), (1, 89)])
    for x in (-3.0, 0.02, 7.5):
        real = solve_rtilde(x, H, 0.5)
        near = solve_rtilde(x + 1e-12j, H, 0.5)
        assert real.r_tilde.imag == 0
        assert abs(real.r_tilde - near.r_tilde) < 1e-6
        assert real.residual <= 1e-12 * (1 + abs(x))


def test_rtilde_domain_errors():
    H = unit_bulk(10)
    with pytest.raises(DomainError):
        solve_rtilde(1.0, H, 0.5)  # inside the support
    with pytest.raises(DomainError):
        solve_rtilde(0.0, H, 0.5)  # atom of the companion law
    with pytest.raises(DomainError):
        solve_rtilde(1 - 1j, H, 0.5)


@settings(max_examples=40, deadline=None)
@given(measures, st.floats(0.05, 3.0), st.floats(-10, 15), st.floats(1e-4, 5.0))
def test_rtilde_residual_and_sign(H, c, x, y):
    z = complex(x, y)
    sol = solve_rtilde(z, H, c)
    assert sol.residual <= 1e-12 * (1 + abs(z))
    assert sol.r_tilde.imag >= 0


# --- phi -----------------------------------------------------------------------

def test_phi_two_cluster_example():
    H = SpectralMeasure.from_atoms([(3, 2), (1, 58)])
    assert abs(phi(3, H, 0.6) - 3.9) < 1e-12


def test_phi_spiked_covariance_values():
    p = 1000
    assert abs(phi(7, SpectralMeasure.from_atoms([(7, 1), (1, p - 1)]), 0.5) - 7.583) < 5e-4
    assert abs(phi(5, SpectralMeasure.from_atoms([(5, 1), (1, p - 1)]), 0.5) - 5.625) < 5e-4
    assert abs(phi(3, SpectralMeasure.from_atoms([(3, 1), (1, p - 1)]), 0.5) - 3.750) < 5e-4


def test_phi_without_noise():
    H = SpectralMeasure.from_atoms([(4, 1), (1, 9)])
    assert phi(2.5, H, 0.0) == 2.5
    assert phi_prime(2.5, H, 0.0) == 1.0


def test_phi_pole_and_domain():
    H = SpectralMeasure.from_atoms([(3, 2), (1, 58)])
    with pytest.raises(PoleError):
        phi(3, H, 0.6, exclude_self=False)
    with pytest.raises(PoleError):
        phi(1, H, 0.6)  # the bulk atom is not a spike
    with pytest.raises(DomainError):
        phi(-1, H, 0.6)


@settings(max_examples=30, deadline=None)
@given(measures, st.floats(0.05, 2.0), st.floats(0.1, 40.0))
def test_phi_increasing_where_derivative_positive(H, c, gamma):
    assume(np.min(np.abs(H.values - gamma)) > 1e-3)
    d = phi_prime(gamma, H, c, exclude_self=False)
    assume(d > 1e-3)
    h = 1e-6 * max(1.0, gamma)
    assume(np.min(np.abs(H.values - gamma)) > 10 * h)
    assert phi(gamma + h, H, c, False) > phi(gamma - h, H, c, False)


def test_classify_distant_and_close():
    c = 0.5
    H = SpectralMeasure.from_atoms([(5, 1), (1, 199)])
    res = classify_spike(5, H, c)
    assert res.kind is SpikeKind.DISTANT and res.phi_derivative > 0
    assert res.sample_limit == res.phi_value
    gamma = 1 + 0.5 * np.sqrt(c)
    res = classify_spike(gamma, SpectralMeasure.from_atoms([(gamma, 1), (1, 199)]), c)
    assert res.kind is SpikeKind.CLOSE and res.phi_derivative <= 0
    assert abs(res.sample_limit - (1 + np.sqrt(c)) ** 2) < 1e-9
    assert classify_spike(1.01, SpectralMeasure.from_atoms([(1.01, 1), (1, 99)]), 0.0).is_distant


# --- omega roots, projections, eta -----------------------------------------

def test_omega_single_atom():
    np.testing.assert_allclose(omega_roots(unit_bulk(100), 200), [0.5], atol=1e-12)


def test_omega_two_atom_oracle():
    H = SpectralMeasure.from_atoms([(5, 1), (1, 99)])
    ref = brentq(lambda w: 5 / (5 - w) + 99 / (1 - w) - 200, 1 + 1e-9, 5 - 1e-9, xtol=1e-15)
    roots = omega_roots(H, 200)
    assert abs(roots[0] - ref) < 1e-10
    assert abs(roots[0] - 4.9778) < 1e-4


@settings(max_examples=40, deadline=None)
@given(measures, st.integers(10, 400))
def test_omega_interlacing_and_residual(H, n):
    roots = omega_roots(H, n)
    t, m = H.values, H.multiplicities
    assert roots.size == t.size
    for k, w in enumerate(roots):
        assert w < t[k] and (k + 1 == t.size or w > t[k + 1])
        slope = np.sum(m * t / (t - w) ** 2) / n
        assert abs(np.sum(m * t / (t - w)) / n - 1) <= 1e-10 + 4 * np.finfo(float).eps * w * slope


@settings(max_examples=40, deadline=None)
@given(measures, st.integers(10, 400), st.data())
def test_trace_identity(H, n, data):
    k = data.draw(st.integers(1, H.n_atoms))
    coeff = projection_coeffs(k, H, n)
    assert abs(coeff @ H.multiplicities - H.multiplicities[k - 1]) < 1e-10 * max(1, H.p)


def test_projection_coeffs_two_atom():
    H = SpectralMeasure.from_atoms([(5, 1), (1, 99)])
    w1 = omega_roots(H, 200)[0]
    c12 = 5 / (1 - 5) - w1 / (1 - w1)
    coeff = projection_coeffs(1, H, 200)
    assert abs(coeff[1] - c12) < 1e-12
    assert abs(coeff[0] - (1 - 99 * c12)) < 1e-12
    # close to the large-n asymptote (1 - c/d^4)/(1 + c/d^2) with d^2 = 4, c = 1/2
    assert abs(coeff[0] - 0.8611) < 2e-3
    assert abs(coeff[0] - 0.8624) < 1e-3


def test_projection_single_atom_and_degenerate():
    np.testing.assert_allclose(projection_coeffs(1, unit_bulk(50), 100), [1.0])
    H = SpectralMeasure(np.array([1.0 + 1e-9, 1.0]), np.array([1, 4]))
    with pytest.raises(DegenerateSpectrumError):
        projection_coeffs(1, H, 10)
    with pytest.raises(DegenerateSpectrumError):
        eta(1, H, 10)


def test_eta_examples():
    H = SpectralMeasure.from_atoms([(5, 1), (1, 99)])
    assert abs(eta(1, H, 200) - 0.9690625) < 1e-14
    assert eta(1, unit_bulk(7), 20) == 1.0
    atoms = [(9.0, 2), (4.0, 1), (1.5, 3), (1.0, 40)]
    shuffled = SpectralMeasure.from_atoms(atoms[::-1])
    assert eta(2, SpectralMeasure.from_atoms(atoms), 90) == eta(2, shuffled, 90)


# --- eigenvector limits -------------------------------------------------------

def _rank_one(p, n, d, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)
    r /= np.linalg.norm(r)
    g = np.zeros(p)
    g[0] = 1
    return d * np.outer(g, r), r


def test_right_overlap_rank_one():
    A, r = _rank_one(200, 400, 2.0)
    model = EquivalentModel.build(A, np.eye(200))
    value = right_overlap_limit(r, 1, model)
    assert abs(value - (1 - 199 / 400 / 16) * 4 / 5) < 1e-12
    assert abs(value - 0.775) < 1e-3
    u = np.zeros(400)
    u[np.argmin(np.abs(r))] = 1
    u -= (u @ r) * r
    u /= np.linalg.norm(u)
    assert abs(right_overlap_limit(u, 1, model)) < 1e-14
    with pytest.raises(SpecError):
        right_overlap_limit(2 * r, 1, model)


def test_maximizer_matches_closed_form():
    rng = np.random.default_rng(4)
    p, n = 30, 60
    A = rng.standard_normal((p, 2)) @ rng.standard_normal((2, n)) / np.sqrt(n) * 2
    model = EquivalentModel.build(A, toeplitz_matrix(0.3, p))
    u, value = best_right_direction(1, model)
    assert abs(right_overlap_limit(u, 1, model) - value) < 1e-12
    other = rng.standard_normal(n)
    other /= np.linalg.norm(other)
    assert right_overlap_limit(other, 1, model) <= value + 1e-12


def test_left_projection():
    A, _ = _rank_one(50, 100, 2.0)
    model = EquivalentModel.build(A, np.eye(50))
    xi = model.eigenspace(1)[:, 0]
    coeff = projection_coeffs(1, model.measure, 100)
    assert abs(left_projection_limit(xi, 1, model) - coeff[0]) < 1e-12
    e2 = np.eye(50)[1]
    assert abs(left_projection_limit(e2, 1, model) - coeff[1]) < 1e-12
    basis = np.linalg.qr(np.random.default_rng(1).standard_normal((50, 50)))[0]
    total = sum(left_projection_limit(basis[:, i], 1, model) for i in range(50))
    assert abs(total - 1) < 1e-10


# --- support and classical locations ---------------------------------------

def test_marchenko_pastur_support():
    (iv,) = support_endpoints(unit_bulk(100), 0.5)
    assert abs(iv.lower - (1 - np.sqrt(0.5)) ** 2) < 1e-12
    assert abs(iv.upper - (1 + np.sqrt(0.5)) ** 2) < 1e-12
    assert iv.count == 100


def test_support_collapses_as_c_vanishes():
    H = SpectralMeasure.from_atoms([(4, 10), (1, 90)])
    ivs = support_endpoints(H, 1e-8)
    assert len(ivs) == 2
    for iv, atom in zip(ivs, (1.0, 4.0)):
        assert iv.lower <= atom * (1 + 1e-3) and iv.upper >= atom * (1 - 1e-3)
        assert iv.width < 1e-3
    zero = support_endpoints(H, 0.0)
    assert [(iv.lower, iv.upper) for iv in zero] == [(1.0, 1.0), (4.0, 4.0)]


def test_spike_interval_shrinks_with_weight():
    widths = []
    for p in (100, 400, 1600, 6400):
        ivs = support_endpoints(SpectralMeasure.from_atoms([(5, 1), (1, p - 1)]), 0.5)
        assert [iv.count for iv in ivs] == [p - 1, 1]
        assert ivs[1].lower < phi(5, SpectralMeasure.from_atoms([(5, 1), (1, p - 1)]), 0.5) < ivs[1].upper
        widths.append(ivs[1].width)
    ratios = np.array(widths[:-1]) / np.array(widths[1:])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.05)


def test_support_counts_when_p_exceeds_n():
    H = unit_bulk(150)
    (iv,) = support_endpoints(H, AspectRatio(150, 100))
    assert iv.count == 100
    assert abs(iv.lower - (1 - np.sqrt(1.5)) ** 2) < 1e-12


def test_density_normalization():
    for c in (0.3, 0.6, 1.0):
        H = SpectralMeasure.from_atoms([(3, 20), (1, 80)])
        total = sum(interval_mass(iv, H, c) for iv in support_endpoints(H, c))
        assert abs(total - 1) < 1e-4


def test_classical_location_top_edge():
    H = unit_bulk(6000)
    mu = classical_locations(H, 0.6, 1)
    assert abs(mu - (1 + np.sqrt(0.6)) ** 2) < 0.02
    assert bulk_edge(H, 0.6) == pytest.approx((1 + np.sqrt(0.6)) ** 2, abs=1e-12)


def test_classical_location_bottom_and_monotone():
    H = unit_bulk(60)
    mus = classical_locations(H, 0.6, np.arange(1, 61))
    assert abs(mus[-1] - (1 - np.sqrt(0.6)) ** 2) < 1e-6
    assert np.all(np.diff(mus) < 0)


def test_classical_location_quantile_oracle():
    # MP quantile by a dense numeric CDF
    c, p = 0.5, 40
    a, b = (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2
    x = np.linspace(a, b, 400_001)
    f = np.sqrt(np.clip((b - x) * (x - a), 0, None)) / (2 * np.pi * c * x)
    tail = np.concatenate([np.cumsum((f[1:] + f[:-1])[::-1] / 2 * (x[1] - x[0]))[::-1], [0]])
    for j in (5, 20, 33):
        ref = x[np.argmin(np.abs(tail - j / p))]
        assert abs(classical_locations(unit_bulk(p), c, j) - ref) < 1e-4


def test_classical_location_beyond_rank():
    assert classical_locations(unit_bulk(150), AspectRatio(150, 100), 120) == 0.0
    with pytest.raises(DomainError):
        classical_locations(unit_bulk(10), 0.5, 11)


# --- deterministic equivalents ----------------------------------------------

def test_tildeD_reduces_to_rtilde_without_signal():
    model = EquivalentModel.build(np.zeros((20, 40)), np.eye(20))
    r = solve_rtilde(-2, model.measure, 0.5).r_tilde
    for i in (0, 7, 39):
        assert abs(det_equiv_tildeD_quadform(np.eye(40)[i], -2, model) - r) < 1e-14
    np.testing.assert_allclose(det_equiv_tildeD(-2, model), r * np.eye(40), atol=1e-14)


def test_D_on_population_eigenvector():
    A, _ = _rank_one(30, 60, 2.0)
    model = EquivalentModel.build(A, np.eye(30))
    z = 1 + 0.5j
    r = solve_rtilde(z, model.measure, 0.5).r_tilde
    xi = model.eigenspace(1)[:, 0]
    assert abs(det_equiv_D_quadform(xi, z, model) - 1 / (-z - z * r * 5)) < 1e-12


def test_centered_model_uses_phi():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((10, 20))
    model = EquivalentModel.build(A, np.eye(10), centered=True)
    Phi = np.eye(20) - 1 / 20
    np.testing.assert_allclose(model.R, A @ Phi @ A.T + np.eye(10), atol=1e-12)
    u = rng.standard_normal(20)
    u /= np.linalg.norm(u)
    full = det_equiv_tildeD(-1.0, model)
    assert abs(u @ full @ u - det_equiv_tildeD_quadform(u, -1.0, model)) < 1e-12
    ones = np.ones(20) / np.sqrt(20)
    # the centered equivalent sends the constant direction to -1/z
    assert abs(det_equiv_tildeD_quadform(ones, -1.0, model) - 1.0 / 20 * 20) < 1e-12


def test_uncentered_model_identity():
    A, _ = _rank_one(15, 30, 1.5)
    S = toeplitz_matrix(0.4, 15)
    model = EquivalentModel.build(A, S)
    assert np.max(np.abs(model.R - (A @ A.T + S))) < 1e-10


def _mc_companion(A, Sigma, u, z, draws, seed):
    p, n = A.shape
    root = psd_sqrt(Sigma)
    rng = make_rng(seed, 0)
    vals = np.empty(draws)
    for i in range(draws):
        X = A + root @ rng.standard_normal((p, n)) / np.sqrt(n)
        G = X.T @ X - z * np.eye(n)
        vals[i] = u @ np.linalg.solve(G, u)
    return vals


@pytest.mark.xfail(strict=True, reason="at p = n = 40 the O(1/n) bias is several Monte Carlo "
                                       "standard errors; convergence is tested in the acceptance suite")
def test_tildeD_monte_carlo_small_model():
    p = n = 40
    A, _ = _rank_one(p, n, 1.0, seed=3)
    S = toeplitz_matrix(0.2, p)
    u = np.random.default_rng(9).standard_normal(n)
    u /= np.linalg.norm(u)
    vals = _mc_companion(A, S, u, -2.0, 2000, 11)
    target = det_equiv_tildeD_quadform(u, -2.0, EquivalentModel.build(A, S)).real
    assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / np.sqrt(vals.size)


# --- coupled deltas -------------------------------------------------------------

def test_coupled_matches_rtilde_without_signal():
    sol = solve_coupled_deltas(1 + 0.5j, np.zeros((40, 80)), np.eye(40))
    r = solve_rtilde(1 + 0.5j, unit_bulk(40), 0.5).r_tilde
    assert abs(sol.delta_tilde - r) < 1e-9
    assert max(sol.residuals) <= 1e-10
    # delta = c * m(z) for the identity covariance
    m = stieltjes_transform(1 + 0.5j, unit_bulk(40), 0.5)
    assert abs(sol.delta - 0.5 * m) < 1e-9


def test_coupled_residuals_with_signal():
    A, _ = _rank_one(20, 50, 2.0)
    sol = solve_coupled_deltas(-2.0, A, toeplitz_matrix(0.2, 20))
    assert max(sol.residuals) <= 1e-10
    assert sol.delta.imag == 0 and sol.delta.real > 0


def test_coupled_gap_shrinks_with_n():
    gaps = []
    for n in (50, 100, 200, 400):
        p = n // 2
        A, r = _rank_one(p, n, 2.0, seed=5)
        S = toeplitz_matrix(0.2, p)
        model = EquivalentModel.build(A, S)
        u = r
        coupled = solve_coupled_deltas(-2.0, A, S).quadform_T_tilde(u)
        gaps.append(abs(coupled - det_equiv_tildeD_quadform(u, -2.0, model)))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_coupled_domain():
    with pytest.raises(DomainError):
        solve_coupled_deltas(1.0, np.zeros((3, 6)), np.eye(3))


# --- spiked covariance closed form ------------------------------------------

def test_spiked_sigma_examples():
    assert spiked_sigma_two_eigs(2, 2, 1) == (7.0, 1.0)
    assert spiked_sigma_two_eigs(2, 2, 0) == (5.0, 3.0)
    assert spiked_sigma_two_eigs(0, 3, 0.4) == (4.0, 1.0)
    with pytest.raises(DomainError):
        spiked_sigma_two_eigs(-1, 0, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 4), st.floats(0, 4), st.floats(0, 1))
def test_spiked_sigma_matches_eigendecomposition(d, ell, g1):
    p = 6
    g = np.zeros(p)
    g[0], g[1] = g1, np.sqrt(1 - g1 * g1)
    R = d * d * np.outer(g, g) + np.diag([ell + 1] + [1.0] * (p - 1))
    top = np.sort(np.linalg.eigvalsh(R))[::-1]
    g_hi, g_lo = spiked_sigma_two_eigs(d, ell, g1)
    assert abs(top[0] - g_hi) < 1e-9 * max(1, g_hi)
    others = np.delete(top, 0)
    assert np.min(np.abs(others - g_lo)) < 1e-7 * max(1, g_hi)
