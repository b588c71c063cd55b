"""Deterministic limits for signal-plus-noise matrices ``X = A + Sigma^{1/2} W``.

Everything here is a pure function of the population matrix ``R = AA^T + Sigma``
(through its spectral measure ``H``) and the aspect ratio ``c = p/n``:

* the Stieltjes-type fixed point ``r~(z)`` and its density on the real line,
* the spike map ``phi`` and the distant/close classification,
* the secular roots ``omega`` and eigenvector projection coefficients,
* deterministic equivalents of resolvent quadratic forms,
* the support of the limiting spectrum and classical eigenvalue locations.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._validation import as_matrix, as_symmetric, as_unit_vector, as_vector
from .exceptions import (DegenerateSpectrumError, DimensionError, DomainError,
                         IntegrationError, NumericError, PoleError,
                         RootIsolationError)
from .matkernel import SymEigResult, sym_eig

GROUPING_RTOL = 1e-6
RTILDE_TOL = 1e-13
RTILDE_MAX_ITER = 10_000
RESIDUAL_RTOL = 1e-12
OMEGA_RESIDUAL_TOL = 1e-10
POLE_TOL = 1e-12
ATOM_MATCH_RTOL = 1e-8
MERGE_RTOL = 1e-3
DENSITY_EPS = 1e-9
COUPLED_TOL = 1e-10


# ---------------------------------------------------------------------------
# spectral measures


@dataclass(frozen=True)
class SpectralMeasure:
    """Discrete spectral measure: distinct atoms (descending) with multiplicities."""

    values: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        mult = np.asarray(self.multiplicities).ravel()
        if values.size == 0 or values.size != mult.size:
            raise DimensionError("a spectral measure needs one multiplicity per atom")
        if np.any(mult < 1) or np.any(mult != np.round(mult)):
            raise DimensionError("multiplicities must be positive integers")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("atoms must be finite and non-negative")
        if np.any(np.diff(values) >= 0):
            raise DimensionError("atoms must be strictly decreasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "multiplicities", mult.astype(np.int64))

    @classmethod
    def from_atoms(cls, atoms):
        """Build from ``[(value, multiplicity), ...]`` in any order."""
        atoms = sorted(((float(v), int(m)) for v, m in atoms), key=lambda a: -a[0])
        return cls(np.array([a[0] for a in atoms]), np.array([a[1] for a in atoms]))

    @classmethod
    def from_eigenvalues(cls, eigenvalues, rtol=GROUPING_RTOL, neg_tol=1e-10):
        """Group a numeric spectrum into atoms.

        A new atom starts wherever consecutive sorted eigenvalues differ by more
        than ``rtol`` times the spectral scale; each atom takes its group mean.
        """
        eig = np.sort(as_vector(eigenvalues, name="eigenvalues"))[::-1]
        scale = max(float(np.max(np.abs(eig))), np.finfo(float).tiny)
        if eig[-1] < -neg_tol * scale:
            raise DomainError(f"negative eigenvalue {eig[-1]:.3g} in a PSD spectrum")
        eig = np.clip(eig, 0.0, None)
        breaks = np.flatnonzero(-np.diff(eig) > rtol * scale) + 1
        groups = np.split(eig, breaks)
        return cls(np.array([g.mean() for g in groups]), np.array([g.size for g in groups]))

    @classmethod
    def from_matrix(cls, R, rtol=GROUPING_RTOL):
        return cls.from_eigenvalues(sym_eig(R).values, rtol)

    @property
    def p(self):
        return int(self.multiplicities.sum())

    @property
    def n_atoms(self):
        return self.values.size

    @property
    def weights(self):
        return self.multiplicities / self.p

    @property
    def atoms(self):
        return list(zip(self.values.tolist(), self.multiplicities.tolist()))

    def expand(self):
        """Eigenvalues repeated by multiplicity, descending."""
        return np.repeat(self.values, self.multiplicities)

    def atom_of(self, index):
        """0-based atom holding the ``index``-th (0-based) largest eigenvalue."""
        return int(np.searchsorted(np.cumsum(self.multiplicities), index, side="right"))

    def atoms_covering(self, k):
        """Number of leading atoms whose multiplicities add up to exactly ``k``."""
        cum = np.cumsum(self.multiplicities)
        hit = np.flatnonzero(cum == k)
        if hit.size == 0:
            raise DegenerateSpectrumError(
                f"the top {k} eigenvalues split an atom (cumulative multiplicities {cum[:5].tolist()}...)")
        return int(hit[0] + 1)

    def bulk(self, n_spike_atoms):
        """Measure with the ``n_spike_atoms`` largest atoms removed (renormalized)."""
        if not 0 <= n_spike_atoms < self.n_atoms:
            raise DomainError(f"cannot remove {n_spike_atoms} of {self.n_atoms} atoms")
        return SpectralMeasure(self.values[n_spike_atoms:], self.multiplicities[n_spike_atoms:])

    def _positive(self):
        keep = self.values > 0
        return self.values[keep], self.weights[keep]


@dataclass(frozen=True)
class AspectRatio:
    p: int
    n: int

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise DimensionError("p and n must be positive")

    @property
    def c(self):
        return self.p / self.n

    def __float__(self):
        return self.c


def _ratio(c):
    c = float(c)
    if not np.isfinite(c) or c < 0:
        raise DomainError(f"aspect ratio must be finite and non-negative, got {c}")
    return c


def _sample_size(H, c):
    if isinstance(c, AspectRatio):
        return c.n
    c = _ratio(c)
    return int(round(H.p / c)) if c > 0 else np.inf


# ---------------------------------------------------------------------------
# the spike map


def _phi_terms(x, t, w, c):
    x = np.asarray(x, dtype=float)
    diff = x[..., None] - t
    value = x * (1.0 + c * np.sum(w * t / diff, axis=-1))
    deriv = 1.0 - c * np.sum(w * t * t / diff ** 2, axis=-1)
    return value, deriv


def _phi_measure(gamma, H, exclude_self):
    """Positive atoms/weights seen by a spike at ``gamma``."""
    gamma = float(gamma)
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    t, w = H._positive()
    close = np.abs(t - gamma) <= ATOM_MATCH_RTOL * max(1.0, gamma)
    if not close.any():
        return t, w
    exact = np.abs(t - gamma) <= POLE_TOL * max(1.0, gamma)
    if not exclude_self:
        if exact.any():
            raise PoleError(f"gamma={gamma} coincides with an atom of H")
        return t, w
    own = w[close].sum()
    if own >= 0.5:
        raise PoleError(f"gamma={gamma} is a bulk atom of H (weight {own:.3g}), not a spike")
    return t[~close], w[~close] / (1.0 - own)


def phi(gamma, H, c, exclude_self=True):
    """Spike map ``phi(gamma) = gamma (1 + c int t dH(t) / (gamma - t))``.

    When ``gamma`` is itself an atom of ``H`` (the usual plug-in situation,
    where ``H`` contains the spike) that atom is removed and the remaining mass
    renormalized; pass ``exclude_self=False`` to treat a coincidence as a pole.
    """
    t, w = _phi_measure(gamma, H, exclude_self)
    return float(_phi_terms(gamma, t, w, _ratio(c))[0])


def phi_prime(gamma, H, c, exclude_self=True):
    t, w = _phi_measure(gamma, H, exclude_self)
    return float(_phi_terms(gamma, t, w, _ratio(c))[1])


class SpikeKind(str, Enum):
    DISTANT = "distant"
    CLOSE = "close"


@dataclass(frozen=True)
class SpikeClassification:
    gamma: float
    phi_value: float
    phi_derivative: float
    kind: SpikeKind
    sample_limit: float

    @property
    def is_distant(self):
        return self.kind is SpikeKind.DISTANT


def classify_spike(gamma, H, c, exclude_self=True):
    """Distant iff ``phi'(gamma) > 0``; the sample limit is ``phi(gamma)`` or the adjacent edge."""
    t, w = _phi_measure(gamma, H, exclude_self)
    c = _ratio(c)
    value, deriv = (float(v) for v in _phi_terms(gamma, t, w, c))
    if deriv > 0:
        return SpikeClassification(float(gamma), value, deriv, SpikeKind.DISTANT, value)
    structure = _support_structure(t, w, c, H.p, _sample_size(H, c) if c > 0 else np.inf)
    limit = structure.adjacent_edge(float(gamma))
    return SpikeClassification(float(gamma), value, deriv, SpikeKind.CLOSE, limit)


# ---------------------------------------------------------------------------
# support of the limiting spectrum


@dataclass(frozen=True)
class SupportInterval:
    lower: float
    upper: float
    count: int
    x_lower: float = field(default=-np.inf, repr=False)
    x_upper: float = field(default=np.inf, repr=False)

    def __iter__(self):
        yield self.lower
        yield self.upper

    @property
    def width(self):
        return self.upper - self.lower


def _bisect(f, lo, hi, max_iter=200):
    """Root of a function increasing on ``[lo, hi]`` to machine precision."""
    flo = f(lo)
    fhi = f(hi)
    if flo > 0 or fhi < 0:
        raise RootIsolationError(f"no sign change on [{lo:.6g}, {hi:.6g}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class _SupportStructure:
    t: np.ndarray
    w: np.ndarray
    c: float
    intervals: list
    increasing: list

    def adjacent_edge(self, x):
        for iv in self.intervals:
            if iv.x_lower < x < iv.x_upper:
                inside = self.t[(self.t > iv.x_lower) & (self.t < iv.x_upper)]
                if inside.size and x < inside.min():
                    return iv.lower
                return iv.upper
        nearest = min(self.intervals, key=lambda iv: min(abs(x - iv.x_lower), abs(x - iv.x_upper)))
        return nearest.upper


@np.errstate(divide="ignore")
def _critical_points(t, w, c):
    """Real critical points of ``phi`` in increasing order, grouped per gap.

    Returns ``(low, gaps, top)`` where ``gaps[i]`` is either ``None`` or the
    pair of critical points between ``t[i+1]`` and ``t[i]``.
    """
    tt = w * t * t
    big = 2.0 * np.sqrt(c * tt.sum())
    target = 1.0 / c

    def g(x):
        return float(np.sum(tt / (x - t) ** 2))

    def gprime(x):
        return float(-2.0 * np.sum(tt / (x - t) ** 3))

    top = _bisect(lambda x: target - g(x), t[0] * (1 + 1e-15) + 1e-300, t[0] + big)
    low = _bisect(lambda x: g(x) - target, t[-1] - big, t[-1] * (1 - 1e-15) - 1e-300)
    gaps = []
    for i in range(t.size - 1):
        a, b = t[i + 1], t[i]
        ia = max(a + (b - a) * 1e-15, np.nextafter(a, np.inf))
        ib = min(b - (b - a) * 1e-15, np.nextafter(b, -np.inf))
        xm = _bisect(gprime, ia, ib)
        if g(xm) >= target:
            gaps.append(None)
            continue
        left = _bisect(lambda x: target - g(x), ia, xm)
        right = _bisect(lambda x: g(x) - target, xm, ib)
        gaps.append((left, right))
    return low, gaps[::-1], top


def _support_structure(t, w, c, p, n, merge_rtol=MERGE_RTOL):
    if t.size == 0:
        raise DegenerateSpectrumError("H has no positive atoms")
    mult = np.rint(w * p).astype(np.int64)
    n_nonzero = int(min(mult.sum(), n)) if np.isfinite(n) else int(mult.sum())
    if c == 0:
        intervals = [SupportInterval(v, v, int(m), v, v) for v, m in zip(t[::-1], mult[::-1])]
        return _SupportStructure(t, w, c, intervals, [])

    low, gaps, top = _critical_points(t, w, c)
    # x-ranges of the decreasing pieces, ascending
    cuts = [low]
    increasing = [(-np.inf, low)]
    for gap in gaps:
        if gap is not None:
            cuts.extend(gap)
            increasing.append(gap)
    cuts.append(top)
    increasing.append((top, np.inf))

    x_ranges = [(cuts[i], cuts[i + 1]) for i in range(0, len(cuts), 2)]
    edges = [float(v) for v in _phi_terms(np.array(cuts), t, w, c)[0]]
    raw = []
    for i, (xa, xb) in enumerate(x_ranges):
        inside = (t > xa) & (t < xb)
        raw.append([edges[2 * i], edges[2 * i + 1], int(mult[inside].sum()), xa, xb])
    raw[0][2] = n_nonzero - sum(r[2] for r in raw[1:])

    diameter = raw[-1][1] - raw[0][0]
    merged = [raw[0]]
    for item in raw[1:]:
        if item[0] - merged[-1][1] < merge_rtol * diameter:
            prev = merged[-1]
            merged[-1] = [prev[0], item[1], prev[2] + item[2], prev[3], item[4]]
        else:
            merged.append(item)
    intervals = [SupportInterval(lo, hi, cnt, xa, xb) for lo, hi, cnt, xa, xb in merged]
    return _SupportStructure(t, w, c, intervals, increasing)


def support_endpoints(H, c, merge_rtol=MERGE_RTOL):
    """Disjoint support intervals of the limiting p x p spectrum, ascending.

    Each interval carries the number of sample eigenvalues it holds (the
    multiplicities of the atoms whose x-range maps onto it; the lowest interval
    absorbs the remainder so the total is ``min(p, n)`` non-zero eigenvalues).
    """
    t, w = H._positive()
    c_val = _ratio(c)
    n = _sample_size(H, c) if c_val > 0 else np.inf
    return _support_structure(t, w, c_val, H.p, n, merge_rtol).intervals


def bulk_edge(H, c):
    """Upper edge of the highest support interval."""
    return support_endpoints(H, c)[-1].upper


# ---------------------------------------------------------------------------
# the fixed point r~(z)


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    r_tilde: complex
    residual: float


def _rtilde_residual(r, z, t, w, c):
    return z + 1.0 / r - c * np.sum(w * t / (1.0 + t * r), axis=-1)


def _rtilde_newton(r, z, t, w, c, steps=50, tol=RTILDE_TOL):
    """Vectorized safeguarded Newton on ``F(r) = z + 1/r - c int t/(1+tr)``."""
    r = np.array(r, dtype=complex)
    z = np.asarray(z, dtype=complex)
    for _ in range(steps):
        rr = r[..., None]
        F = z + 1.0 / r - c * np.sum(w * t / (1.0 + t * rr), axis=-1)
        dF = -1.0 / r ** 2 + c * np.sum(w * t * t / (1.0 + t * rr) ** 2, axis=-1)
        step = F / dF
        new = r - step
        # keep the upper half-plane branch
        for _ in range(30):
            bad = (new.imag < 0) & (z.imag > 0)
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
            new = r - step
        r = new
        if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(r))):
            break
    return r


def _fixed_point(z, t, w, c, r0, tol=RTILDE_TOL, max_iter=RTILDE_MAX_ITER):
    """Damped fixed-point iteration; damping 0.5 engages when the residual grows."""
    r = r0
    res = abs(_rtilde_residual(r, z, t, w, c))
    damping = 1.0
    for _ in range(max_iter):
        target = -1.0 / (z - c * np.sum(w * t / (1.0 + t * r)))
        new = (1 - damping) * r + damping * target
        new_res = abs(_rtilde_residual(new, z, t, w, c))
        damping = 0.5 if new_res > res else 1.0
        done = abs(new - r) <= tol * max(1.0, abs(new))
        r, res = new, new_res
        if done:
            break
    return r, res


def _rtilde_upper(z, t, w, c):
    """r~ on an array of points in the upper half-plane, by continuation in Im z."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    scale = (1.0 + c) * max(1.0, float(t.max()))
    eta0 = np.maximum(z.imag, scale)
    start = z.real + 1j * eta0
    r = -1.0 / start
    for _ in range(500):
        new = -1.0 / (start - c * np.sum(w * t / (1.0 + t * r[:, None]), axis=-1))
        if np.all(np.abs(new - r) <= 1e-14 * np.maximum(1.0, np.abs(new))):
            r = new
            break
        r = new
    eta = eta0.copy()
    while np.any(eta > z.imag):
        eta = np.maximum(0.5 * eta, z.imag)
        r = _rtilde_newton(r, z.real + 1j * eta, t, w, c, steps=60)
    return _rtilde_newton(r, z, t, w, c, steps=20)


def _rtilde_real(x, structure):
    """Exact real r~ outside the support via the increasing branches of phi."""
    t, w, c = structure.t, structure.w, structure.c
    for lo, hi in structure.increasing:
        if np.isfinite(lo) and np.isfinite(hi):
            image = _phi_terms(np.array([lo, hi]), t, w, c)[0]
            if not image[0] < x < image[1]:
                continue
        elif np.isinf(lo):
            if x >= _phi_terms(hi, t, w, c)[0]:
                continue
            lo = hi - 1.0
            while _phi_terms(lo, t, w, c)[0] >= x:
                lo = hi - 2.0 * (hi - lo)
        else:
            if x <= _phi_terms(lo, t, w, c)[0]:
                continue
            hi = lo + 1.0
            while _phi_terms(hi, t, w, c)[0] <= x:
                hi = lo + 2.0 * (hi - lo)
        xi = _bisect(lambda v: float(_phi_terms(v, t, w, c)[0]) - x, lo, hi)
        if xi == 0.0:
            break
        return -1.0 / xi
    raise DomainError(f"z={x} lies inside the support; r~ has no real value there")


def solve_rtilde(z, H, c, tol=RTILDE_TOL, max_iter=RTILDE_MAX_ITER):
    """Solve ``z = -1/r + c int t dH(t) / (1 + t r)`` for ``r = r~(z)``.

    For ``Im z > 0`` a damped fixed-point iteration (started at ``-1/z``) is
    polished by Newton and, if it stalls, replaced by a continuation in
    ``Im z``. For real ``z`` outside the support the real branch is solved
    exactly through ``phi(x) = z``, ``r~ = -1/x``.
    """
    z = complex(z)
    c_val = _ratio(c)
    t, w = H._positive()
    scale = 1.0 + abs(z)
    if z.imag < 0:
        raise DomainError("r~ is defined on the upper half-plane and the real line")
    if t.size == 0 or c_val == 0:
        # the companion spectrum collapses to zero
        if z == 0:
            raise DomainError("z = 0 is a pole")
        r = -1.0 / z
        return StieltjesSolution(z, r, float(abs(_rtilde_residual(r, z, t, w, c_val))))
    if z == 0 and c_val <= 1:
        raise DomainError("z = 0 is a singularity of r~ when p <= n")
    if z.imag == 0:
        structure = _support_structure(t, w, c_val, H.p, _sample_size(H, c))
        r = complex(_rtilde_real(z.real, structure))
    else:
        r, _ = _fixed_point(z, t, w, c_val, -1.0 / z, tol, max_iter)
        r = complex(_rtilde_newton(r, z, t, w, c_val, steps=5)[()])
        if abs(_rtilde_residual(r, z, t, w, c_val)) > RESIDUAL_RTOL * scale or r.imag < 0:
            r = complex(_rtilde_upper(z, t, w, c_val)[0])
    res = float(abs(_rtilde_residual(r, z, t, w, c_val)))
    if res > RESIDUAL_RTOL * scale or (z.imag > 0 and r.imag < 0):
        raise NumericError(f"r~({z}) did not converge; last residual {res:.3g}")
    return StieltjesSolution(z, r, res)


def stieltjes_transform(z, H, c):
    """Stieltjes transform ``m(z)`` of the limiting p x p spectrum.

    Recovered from the companion relation ``r~ = -(1 - c)/z + c m``.
    """
    sol = solve_rtilde(z, H, c)
    c_val = _ratio(c)
    if c_val == 0:
        t, w = H._positive()
        zeros = 1.0 - w.sum()
        return complex(np.sum(w / (t - sol.z)) - zeros / sol.z)
    return complex((sol.r_tilde + (1.0 - c_val) / sol.z) / c_val)


def density(x, H, c, eps=DENSITY_EPS):
    """Density of the limiting p x p spectrum, ``Im r~(x + i eps) / (pi c)``."""
    c_val = _ratio(c)
    if c_val == 0:
        raise DomainError("the limiting spectrum is atomic when c = 0")
    x = np.asarray(x, dtype=float)
    t, w = H._positive()
    z = x.ravel() + 1j * eps * (1.0 + np.abs(x.ravel()))
    r = _rtilde_upper(z, t, w, c_val)
    return np.clip(r.imag, 0.0, None).reshape(x.shape) / (np.pi * c_val)


# ---------------------------------------------------------------------------
# classical locations


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _interval_mass_table(iv, H, c, panels):
    """Panel masses of the density on ``iv`` in the angle variable ``x = a + (b-a)(1-cos th)/2``."""
    a, b = iv.lower, iv.upper
    edges = np.linspace(0.0, np.pi, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    theta = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    x = a + (b - a) * (1 - np.cos(theta)) / 2
    f = density(x, H, c) * (b - a) / 2 * np.sin(theta)
    masses = (f.reshape(panels, -1) * _GL_WEIGHTS).sum(axis=1) * half
    return edges, masses


def _panel_mass(iv, H, c, th_lo, th_hi):
    a, b = iv.lower, iv.upper
    half = 0.5 * (th_hi - th_lo)
    theta = 0.5 * (th_hi + th_lo) + half * _GL_NODES
    x = a + (b - a) * (1 - np.cos(theta)) / 2
    f = density(x, H, c) * (b - a) / 2 * np.sin(theta)
    return float(f @ _GL_WEIGHTS * half)


def _converged_masses(iv, H, c, rtol=1e-6):
    panels = 16
    edges, masses = _interval_mass_table(iv, H, c, panels)
    while panels < 4096:
        e2, m2 = _interval_mass_table(iv, H, c, 2 * panels)
        total, total2 = masses.sum(), m2.sum()
        edges, masses, panels = e2, m2, 2 * panels
        if abs(total2 - total) <= rtol * max(total2, 1e-300):
            return edges, masses
    raise IntegrationError(f"density mass on [{iv.lower:.6g}, {iv.upper:.6g}] did not converge")


def interval_mass(iv, H, c):
    """Integrated density over a support interval."""
    return float(_converged_masses(iv, H, c)[1].sum())


def classical_locations(H, c, j):
    """Classical location ``mu_j``: the point with ``j`` limiting eigenvalues above it.

    ``j`` may be an integer in ``1..p`` or an array of them. Within each support
    interval the integrated density is renormalized to the interval's
    eigenvalue count before inversion.
    """
    scalar = np.ndim(j) == 0
    js = np.atleast_1d(np.asarray(j))
    p = H.p
    if np.any(js < 1) or np.any(js > p) or np.any(js != np.round(js)):
        raise DomainError(f"j must be integers in 1..{p}")
    intervals = support_endpoints(H, c)[::-1]
    out = np.empty(js.size)
    tables = {}
    for pos, jj in enumerate(js):
        above = 0
        for idx, iv in enumerate(intervals):
            if jj <= above + iv.count:
                out[pos] = _locate_in_interval(iv, H, c, (jj - above) / iv.count, tables, idx)
                break
            above += iv.count
        else:
            out[pos] = 0.0  # past the non-zero eigenvalues
    return float(out[0]) if scalar else out


def _locate_in_interval(iv, H, c, fraction, tables, key):
    if iv.width <= 1e-12 * max(1.0, iv.upper):
        return 0.5 * (iv.lower + iv.upper)
    if key not in tables:
        edges, masses = _converged_masses(iv, H, c)
        expected = iv.count / H.p
        total = masses.sum()
        if abs(total - expected) > 1e-2 * expected:
            raise IntegrationError(
                f"captured mass {total:.6g} on [{iv.lower:.6g}, {iv.upper:.6g}] "
                f"but the interval should hold {expected:.6g}")
        tables[key] = (edges, masses)
    edges, masses = tables[key]
    total = masses.sum()
    target = fraction * total
    from_top = np.concatenate([[0.0], np.cumsum(masses[::-1])])  # mass above edges[::-1]
    k = int(np.searchsorted(from_top, target, side="left"))
    k = min(max(k, 1), masses.size)
    th_hi = edges[::-1][k - 1]
    th_lo = edges[::-1][k]
    need = target - from_top[k - 1]
    lo, hi = th_lo, th_hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _panel_mass(iv, H, c, mid, th_hi) > need:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    theta = 0.5 * (lo + hi)
    return float(iv.lower + iv.width * (1 - np.cos(theta)) / 2)


# ---------------------------------------------------------------------------
# omega roots, projection coefficients, eta


def _secular(omega, t, m, n):
    return float(np.sum(m * t / (t - omega)) / n - 1.0)


def omega_roots(H, n):
    """Roots of ``(1/n) sum_i m_i g_i / (g_i - omega) = 1``, one per positive atom, descending.

    The k-th root lies strictly between the (k+1)-th and k-th atoms and the
    last one below the smallest atom.
    """
    n = int(n)
    keep = H.values > 0
    t = H.values[keep]
    m = H.multiplicities[keep].astype(float)
    if t.size == 0:
        raise DegenerateSpectrumError("H has no positive atoms")
    roots = np.empty(t.size)
    for k in range(t.size):
        hi = t[k] - 1e-12 * t[k]
        if k + 1 < t.size:
            lo = t[k + 1] + 1e-12 * t[k]
        else:
            lo = t[k] - 1.0
            for _ in range(200):
                if _secular(lo, t, m, n) < 0:
                    break
                lo = t[k] - 2.0 * (t[k] - lo)
        f = lambda x: _secular(x, t, m, n)  # noqa: E731
        if f(lo) > 0 or f(hi) < 0:
            raise RootIsolationError(f"omega bracket for atom {k + 1} has no sign change")
        root = _bisect(f, lo, hi)
        deriv = float(np.sum(m * t / (t - root) ** 2) / n)
        polished = root - f(root) / deriv
        if lo < polished < hi and abs(f(polished)) < abs(f(root)):
            root = polished
        # near-coincident atoms make f steep: allow the error of one ulp in omega
        slack = 4 * np.finfo(float).eps * abs(root) * float(np.sum(m * t / (t - root) ** 2) / n)
        if abs(f(root)) > OMEGA_RESIDUAL_TOL + slack:
            raise RootIsolationError(f"omega root {k + 1} residual {abs(f(root)):.3g}")
        roots[k] = root
    return roots


def _check_separated(t, k):
    gaps = np.abs(np.delete(t, k) - t[k])
    if gaps.size and gaps.min() <= GROUPING_RTOL * max(1.0, t[k]):
        raise DegenerateSpectrumError("coincident atoms; regroup the spectrum first")


def projection_coeffs(k, H, n, omega=None):
    """Coefficients ``c_k(j)`` of the limiting projector onto the k-th spike's sample eigenspace.

    ``k`` is a 1-based index into the distinct atoms of ``H``. Zero atoms get a
    zero coefficient.
    """
    idx = int(k) - 1
    t = H.values
    m = H.multiplicities.astype(float)
    if not 0 <= idx < t.size or t[idx] <= 0:
        raise DomainError(f"k must index a positive atom (1..{np.count_nonzero(t > 0)})")
    _check_separated(t, idx)
    w_k = omega_roots(H, n)[idx] if omega is None else float(omega)
    others = np.arange(t.size) != idx
    coeff = np.zeros(t.size)
    coeff[others] = t[idx] / (t[others] - t[idx]) - w_k / (t[others] - w_k)
    coeff[idx] = 1.0 - np.sum(m[others] * coeff[others]) / m[idx]
    return coeff


def eta(k, H, n):
    idx = int(k) - 1
    t = H.values
    if not 0 <= idx < t.size:
        raise DomainError(f"k must be in 1..{t.size}")
    _check_separated(t, idx)
    others = np.arange(t.size) != idx
    m = H.multiplicities[others]
    return float(1.0 - np.sum(m * t[others] ** 2 / (t[idx] - t[others]) ** 2) / n)


# ---------------------------------------------------------------------------
# population model and deterministic equivalents


@dataclass(frozen=True)
class EquivalentModel:
    """Population objects of a signal-plus-noise model.

    ``R = A A^T + Sigma`` (or ``A Phi A^T + Sigma`` when centered) together
    with its eigen-decomposition and grouped spectral measure.
    """

    A: np.ndarray
    Sigma: np.ndarray
    R: np.ndarray
    measure: SpectralMeasure
    centered: bool
    eig: SymEigResult
    atom_index: np.ndarray

    @classmethod
    def build(cls, A, Sigma, centered=False, rtol=GROUPING_RTOL):
        A = as_matrix(A, "A")
        Sigma = as_symmetric(Sigma, "Sigma")
        if Sigma.shape[0] != A.shape[0]:
            raise DimensionError(f"Sigma is {Sigma.shape}, A has {A.shape[0]} rows")
        signal = centered_signal(A) if centered else A
        R = signal @ signal.T + Sigma
        R = 0.5 * (R + R.T)
        eig = sym_eig(R)
        measure = SpectralMeasure.from_eigenvalues(eig.values, rtol)
        index = np.repeat(np.arange(measure.n_atoms), measure.multiplicities)
        return cls(A, Sigma, R, measure, bool(centered), eig, index)

    @property
    def p(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def c(self):
        return self.p / self.n

    @property
    def signal(self):
        """The matrix playing the role of A in the limits (A Phi when centered)."""
        return centered_signal(self.A) if self.centered else self.A

    def eigenspace(self, k):
        """Orthonormal basis of the eigenspace of the k-th (1-based) atom."""
        return self.eig.vectors[:, self.atom_index == int(k) - 1]


def centered_signal(A):
    return A - A.mean(axis=1, keepdims=True)


def _model_rtilde(z, model):
    return solve_rtilde(z, model.measure, AspectRatio(model.p, model.n)).r_tilde


def right_overlap_limit(u, k, model):
    """Limit of ``u^T (sum of right sample eigenprojections of spike k) u``."""
    u = as_unit_vector(u, model.n, "u")
    idx = int(k) - 1
    gamma = model.measure.values[idx]
    Xi = model.eigenspace(k)
    proj = Xi.T @ (model.signal @ u)
    return float(eta(k, model.measure, model.n) * (proj @ proj) / gamma)


def best_right_direction(k, model):
    """Unit ``u`` maximizing the right overlap limit, and that maximal value."""
    Xi = model.eigenspace(k)
    if Xi.shape[1] != 1:
        raise DegenerateSpectrumError("the maximizer is defined for a simple spike")
    xi = Xi[:, 0]
    v = model.signal.T @ xi
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DomainError("spike k carries no signal")
    gamma = model.measure.values[int(k) - 1]
    value = eta(k, model.measure, model.n) * (1.0 - xi @ model.Sigma @ xi / gamma)
    return v / norm, float(value)


def left_projection_limit(v, k, model):
    """Limit of ``v^T (sum of left sample eigenprojections of spike k) v``."""
    v = as_unit_vector(v, model.p, "v")
    coeff = projection_coeffs(k, model.measure, model.n)
    energy = np.bincount(model.atom_index, weights=(model.eig.vectors.T @ v) ** 2,
                         minlength=model.measure.n_atoms)
    return float(energy @ coeff)


def _solve_complex(M, b, what):
    try:
        out = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"{what} is singular at this z") from exc
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{what} is numerically singular at this z")
    return out


def det_equiv_tildeD(z, model):
    """The n x n deterministic equivalent of the companion resolvent."""
    z = complex(z)
    r = _model_rtilde(z, model)
    n, p = model.n, model.p
    S = model.signal
    inner = _solve_complex(np.eye(p) + r * model.R, S.astype(complex), "I + r~R")
    if model.centered:
        Phi = np.eye(n) - np.full((n, n), 1.0 / n)
        return r * Phi - r * r * (S.T @ inner) - np.full((n, n), 1.0 / (z * n))
    return r * np.eye(n) - r * r * (model.A.T @ inner)


def det_equiv_tildeD_quadform(u, z, model):
    """``u^T D~(z) u`` without forming the n x n matrix."""
    u = as_vector(u, model.n, "u")
    z = complex(z)
    r = _model_rtilde(z, model)
    if model.centered:
        u_c = u - u.mean()
        a = model.signal @ u
        quad = a @ _solve_complex(np.eye(model.p) + r * model.R, a.astype(complex), "I + r~R")
        return complex(r * (u_c @ u_c) - r * r * quad - u.sum() ** 2 / (z * model.n))
    a = model.A @ u
    quad = a @ _solve_complex(np.eye(model.p) + r * model.R, a.astype(complex), "I + r~R")
    return complex(r * (u @ u) - r * r * quad)


def det_equiv_D_quadform(v, z, model):
    """``v^T D(z) v`` with ``D = (-z I - z r~ R)^{-1}``."""
    v = as_vector(v, model.p, "v")
    z = complex(z)
    r = _model_rtilde(z, model)
    M = -z * np.eye(model.p) - z * r * model.R
    return complex(v @ _solve_complex(M, v.astype(complex), "-zI - z r~R"))


@dataclass(frozen=True)
class CoupledDeltas:
    """Solution of the coupled equations for ``(delta, delta~)`` and the matrices ``T, T~``."""

    z: complex
    delta: complex
    delta_tilde: complex
    T: np.ndarray
    T_tilde: np.ndarray
    residuals: tuple

    def quadform_T(self, v):
        v = np.asarray(v, dtype=float)
        return complex(v @ self.T @ v)

    def quadform_T_tilde(self, u):
        u = np.asarray(u, dtype=float)
        return complex(u @ self.T_tilde @ u)


def _coupled_maps(z, delta, delta_tilde, A, Sigma, n):
    p = A.shape[0]
    I_p = np.eye(p)
    T = np.linalg.inv(-z * (I_p + delta_tilde * Sigma) + (A @ A.T) / (1.0 + delta))
    inner = np.linalg.solve(I_p + delta_tilde * Sigma, A.astype(complex))
    T_tilde = np.linalg.inv(-z * (1.0 + delta) * np.eye(n) + A.T @ inner)
    return T, T_tilde, np.trace(Sigma @ T) / n, np.trace(T_tilde) / n


def solve_coupled_deltas(z, A, Sigma, n=None, tol=COUPLED_TOL, max_iter=5000):
    """Solve ``delta = tr(Sigma T)/n``, ``delta~ = tr(T~)/n`` by damped iteration.

    ``z`` must lie in the upper half-plane or on the negative real axis (where
    every matrix involved is real positive definite).
    """
    z = complex(z)
    if not (z.imag > 0 or (z.imag == 0 and z.real < 0)):
        raise DomainError("z must have Im z > 0 or be a negative real number")
    A = as_matrix(A, "A")
    Sigma = as_symmetric(Sigma, "Sigma")
    if n is None:
        n = A.shape[1]
    if A.shape[1] != n or Sigma.shape[0] != A.shape[0]:
        raise DimensionError("A must be p x n and Sigma p x p")
    delta = np.trace(Sigma) / n * (-1.0 / z)
    delta_tilde = -1.0 / z
    damping = 1.0
    prev = np.inf
    for _ in range(max_iter):
        try:
            T, T_tilde, d_new, dt_new = _coupled_maps(z, delta, delta_tilde, A, Sigma, n)
        except np.linalg.LinAlgError as exc:
            raise NumericError("coupled iteration hit a singular matrix") from exc
        res = max(abs(d_new - delta), abs(dt_new - delta_tilde))
        if res <= tol * max(1.0, abs(delta), abs(delta_tilde)):
            delta, delta_tilde = d_new, dt_new
            T, T_tilde, d_chk, dt_chk = _coupled_maps(z, delta, delta_tilde, A, Sigma, n)
            residuals = (float(abs(d_chk - delta)), float(abs(dt_chk - delta_tilde)))
            return CoupledDeltas(z, complex(delta), complex(delta_tilde), T, T_tilde, residuals)
        if res > prev:
            damping = max(0.5 * damping, 1e-3)
        prev = res
        delta = (1 - damping) * delta + damping * d_new
        delta_tilde = (1 - damping) * delta_tilde + damping * dt_new
    raise NumericError(f"coupled iteration did not converge (last change {res:.3g})")


# ---------------------------------------------------------------------------
# spiked-covariance closed form


def spiked_sigma_two_eigs(d, ell, g1):
    """Two non-unit eigenvalues of ``R = d^2 g g^T + diag(ell+1, 1, ..., 1)``.

    ``g1`` is the first coordinate of the unit signal direction ``g``.
    """
    if d < 0 or ell < 0:
        raise DomainError("d and ell must be non-negative")
    if not 0 <= abs(g1) <= 1:
        raise DomainError("g1 must lie in [-1, 1]")
    d2 = d * d
    root = np.sqrt((d2 - ell) ** 2 + 4 * d2 * g1 * g1 * ell)
    return (ell + 2 + d2 + root) / 2, (ell + 2 + d2 - root) / 2
