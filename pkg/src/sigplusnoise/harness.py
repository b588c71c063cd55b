"""Seeded Monte Carlo experiments and theoretical reports for configured scenarios."""
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .clustercount import (CRITERIA, Criterion, EigenvalueSeq, default_w, eda, edb,
                           gap_sequences, zeta_limits)
from .exceptions import ReplicationError, SpecError
from .matkernel import psd_sqrt, sym_eig
from .modelgen import (CovarianceSpec, CovKind, MixtureSpec, ModelSpec, NoiseLaw,
                       build_covariance, build_signal, case_preset, make_rng,
                       population_model, sample_noise, spiked_direction)
from .rmtlimits import (EquivalentModel, bulk_edge, classify_spike, eta,
                        projection_coeffs, spiked_sigma_two_eigs)
from .speclust import gap_statistic_k, silhouette_k

ROLE_NOISE = 0
ROLE_BASELINE = 1
ROLE_DESIGN = 2
BASELINES = ("ASI", "GS")
CRITERION_NAMES = tuple(c.value for c in Criterion) + BASELINES


# ---------------------------------------------------------------------------
# configuration


_TOP_KEYS = {"preset", "p", "n", "mixture", "covariance", "noise", "centered",
             "replications", "master_seed", "criteria", "w_override", "declared_K", "threads"}
_MIXTURE_KEYS = {"means", "fractions"}
_COVARIANCE_KEYS = {"kind", "rho", "excess", "position", "matrix"}


def _reject_unknown(mapping, allowed, where):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise SpecError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass
class ScenarioConfig:
    """Everything needed to replay a Monte Carlo scenario.

    Either ``preset`` (1..8) or an explicit ``mixture`` defines the signal;
    ``covariance`` overrides the preset's noise covariance when given.
    """

    p: int
    n: int
    preset: int = None
    mixture: MixtureSpec = None
    covariance: CovarianceSpec = None
    noise: NoiseLaw = NoiseLaw.GAUSSIAN
    centered: bool = False
    replications: int = 200
    master_seed: int = 0
    criteria: tuple = ("EDA", "EDB")
    w_override: int = None
    declared_K: int = None
    threads: int = 1

    def __post_init__(self):
        self.noise = NoiseLaw(self.noise)
        self.criteria = tuple(self.criteria)
        for name in self.criteria:
            if name not in CRITERION_NAMES:
                raise SpecError(f"unknown criterion {name!r}; choose from {CRITERION_NAMES}")
        if self.preset is None and self.mixture is None:
            raise SpecError("give either a preset or an explicit mixture")
        if self.replications < 1:
            raise SpecError("replications must be >= 1")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise SpecError("master_seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise SpecError("threads must be >= 1")
        model = self.model_spec()
        if self.declared_K is None:
            self.declared_K = model.K
        if self.declared_K < 1:
            raise SpecError("declared_K must be >= 1")
        if self.p > self.n and any(c in ("EDA", "EDB") for c in self.criteria):
            raise SpecError("p > n: EDA/EDB are undefined here, request pEDA/pEDB instead")

    @classmethod
    def from_preset(cls, preset, p, n, **kwargs):
        return cls(p=p, n=n, preset=preset, **kwargs)

    @classmethod
    def from_mapping(cls, data):
        data = dict(data)
        _reject_unknown(data, _TOP_KEYS, "scenario")
        mixture = data.pop("mixture", None)
        if mixture is not None:
            _reject_unknown(mixture, _MIXTURE_KEYS, "[mixture]")
            # means may list only their leading coordinates; the rest are zero
            rows = mixture["means"]
            if rows and np.isscalar(rows[0]):
                rows = [rows]
            means = np.zeros((len(rows), data["p"]))
            for i, row in enumerate(rows):
                if len(row) > data["p"]:
                    raise SpecError(f"mean {i + 1} has more than p = {data['p']} entries")
                means[i, :len(row)] = row
            mixture = MixtureSpec(data["p"], data["n"], means,
                                  np.array(mixture["fractions"], float))
        cov = data.pop("covariance", None)
        if cov is not None:
            _reject_unknown(cov, _COVARIANCE_KEYS, "[covariance]")
            cov = CovarianceSpec(**cov)
        return cls(mixture=mixture, covariance=cov, **data)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))

    def model_spec(self):
        if self.mixture is not None:
            base = ModelSpec(self.mixture, CovarianceSpec.identity(), self.mixture.K, "custom")
        else:
            base = case_preset(self.preset, self.p, self.n)
        if self.covariance is not None:
            base = ModelSpec(base.mixture, self.covariance, base.K, base.name)
        return base

    @property
    def c(self):
        return self.p / self.n

    def to_dict(self):
        model = self.model_spec()
        cov = model.covariance
        cov_dict = {"kind": cov.kind.value, "rho": cov.rho, "excess": cov.excess,
                    "position": cov.position}
        if cov.kind is CovKind.CUSTOM:
            cov_dict["matrix"] = np.asarray(cov.matrix).tolist()
        return {
            "preset": self.preset, "p": self.p, "n": self.n,
            "mixture": {"means": model.mixture.means.tolist(),
                        "fractions": model.mixture.fractions.tolist()},
            "covariance": cov_dict, "noise": self.noise.value, "centered": self.centered,
            "replications": self.replications, "master_seed": int(self.master_seed),
            "criteria": list(self.criteria), "w_override": self.w_override,
            "declared_K": self.declared_K,
        }

    def scenario_hash(self):
        """Short digest of every setting that affects the output (threads excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# execution helpers


def _run_replications(func, replications, threads):
    """``[func(r) for r in range(replications)]`` on a thread pool, in index order."""
    if threads <= 1:
        return [func(r) for r in range(replications)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(replications)))


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


# ---------------------------------------------------------------------------
# selection experiments


@dataclass
class SelectionTable:
    """Percentages of under/exact/over-estimation per criterion."""

    declared_K: int
    percentages: dict
    n_reps: int

    def rows(self):
        return [(name, *self.percentages[name]) for name in self.percentages]

    def write_csv(self, path):
        return write_csv(path, ("criterion", "F_minus", "F_star", "F_plus"), self.rows())


@dataclass
class SelectionRun:
    table: SelectionTable
    rows: list
    failures: list = field(default_factory=list)
    scenario_hash: str = ""

    def write_replications(self, path):
        header = ("scenario_hash", "replication", "seed", "criterion", "k_hat", "w", "capped")
        return write_csv(path, header, self.rows)


def _bin(k_hat, K):
    return 0 if k_hat < K else (1 if k_hat == K else 2)


def _selection_replication(config, model, sigma_root, A, rep):
    rng = make_rng(config.master_seed, rep, ROLE_NOISE)
    W = sample_noise(config.noise, config.p, config.n, rng)
    X = A + sigma_root @ W
    if config.centered:
        X = X - X.mean(axis=1, keepdims=True)
    lam = EigenvalueSeq.from_data(X)
    w_base = config.w_override if config.w_override is not None else default_w(config.n)
    out = {}
    for name in config.criteria:
        if name in BASELINES:
            continue
        kind = Criterion(name)
        m = config.n if kind.pseudo else config.p
        w = min(w_base, m - 2)
        result = CRITERIA[kind](lam, w)
        out[name] = (result.k_hat, w, w < config.declared_K)
    baseline_rng = make_rng(config.master_seed, rep, ROLE_BASELINE)
    w = min(w_base, config.n - 2)
    if "ASI" in config.criteria:
        k, _ = silhouette_k(X, range(2, max(w, 2) + 1), baseline_rng)
        out["ASI"] = (k, w, w < config.declared_K)
    if "GS" in config.criteria:
        k, _, _ = gap_statistic_k(X, range(1, w + 1), rng=baseline_rng)
        out["GS"] = (k, w, w < config.declared_K)
    return out


def run_selection(config, strict=True, threads=None):
    """Monte Carlo selection frequencies of the requested criteria.

    Each replication draws its noise from the stream ``(master_seed,
    replication)``, so results do not depend on ``threads``. A failing
    replication aborts the run when ``strict``; otherwise it is recorded and
    left out of the percentages.
    """
    threads = config.threads if threads is None else threads
    model = config.model_spec()
    A, _ = build_signal(model.mixture)
    sigma_root = psd_sqrt(build_covariance(model.covariance, config.p))

    def task(rep):
        try:
            return _selection_replication(config, model, sigma_root, A, rep)
        except Exception as exc:  # noqa: BLE001 - reported with replay info
            if strict:
                raise ReplicationError(f"replication {rep} failed: {exc}", rep,
                                       config.master_seed) from exc
            return exc

    results = _run_replications(task, config.replications, threads)
    digest = config.scenario_hash()
    rows, failures = [], []
    counts = {name: np.zeros(3, dtype=np.int64) for name in config.criteria}
    for rep, res in enumerate(results):
        if isinstance(res, Exception):
            failures.append((rep, config.master_seed, repr(res)))
            continue
        for name in config.criteria:
            k_hat, w, capped = res[name]
            counts[name][_bin(k_hat, config.declared_K)] += 1
            rows.append((digest, rep, int(config.master_seed), name, k_hat, w, int(capped)))
    done = config.replications - len(failures)
    if done == 0:
        raise ReplicationError("every replication failed", None, config.master_seed)
    percentages = {}
    for name, cnt in counts.items():
        pct = 100.0 * cnt / done
        pct[2] = 100.0 - pct[0] - pct[1]
        percentages[name] = tuple(float(v) for v in pct)
    table = SelectionTable(config.declared_K, percentages, done)
    return SelectionRun(table, rows, failures, digest)


# ---------------------------------------------------------------------------
# eigenvalue / eigenvector matching


@dataclass
class EigenMatchReport:
    """Mean and SD over replications of the top sample eigenvalues and probe overlaps."""

    kind: str
    statistics: list
    n_reps: int
    samples: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        return {name: (mean, sd) for name, mean, sd in self.statistics}

    def rows(self):
        return [(name, mean, sd, self.n_reps) for name, mean, sd in self.statistics]

    def write_csv(self, path):
        return write_csv(path, ("statistic", "mean", "sd", "n_reps"), self.rows())


def signal_from_directions(p, n, strengths, left, right):
    """``A = sum_i d_i g_i r_i^T`` from columns of ``left`` (p x k) and ``right`` (n x k)."""
    strengths = np.asarray(strengths, dtype=float)
    return (np.asarray(left)[:p] * strengths) @ np.asarray(right)[:n].T


def matching_setup(p=100, n=200, seed=0):
    """Rank-two signal with a spiked Toeplitz covariance (the eigen-matching benchmark).

    ``g_1 = (e_1 + e_2)/sqrt 2``, ``g_2 = (e_2 - e_1)/sqrt 2`` with strengths 3
    and 2; the right directions are right singular vectors of a Gaussian
    matrix; ``Sigma = Toeplitz(0.4) + 6 e_3 e_3^T``.
    """
    left = np.zeros((p, 2))
    left[:2, 0] = [1, 1]
    left[:2, 1] = [-1, 1]
    left /= np.sqrt(2)
    G = make_rng(seed, 0, ROLE_DESIGN).standard_normal((p, n))
    right = sym_eig(G.T @ G).vectors[:, :2]
    A = signal_from_directions(p, n, (3.0, 2.0), left, right)
    Sigma = build_covariance(CovarianceSpec.toeplitz_plus_spike(0.4, 6.0, 3), p)
    return A, Sigma


def run_eigen_match(A, Sigma, kind="signal_plus_noise", replications=500, seed=0,
                    probe=None, top=3, threads=1, noise=NoiseLaw.GAUSSIAN):
    """Top eigenvalues of ``X X^T`` and squared overlaps ``(v^T v_i)^2`` with a probe.

    ``kind="signal_plus_noise"`` samples ``A + Sigma^{1/2} W``;
    ``kind="equivalent_wishart"`` samples ``R^{1/2} W`` with ``R = A A^T + Sigma``.
    """
    A = np.asarray(A, dtype=float)
    p, n = A.shape
    if kind == "signal_plus_noise":
        root = psd_sqrt(Sigma)
        shift = A
    elif kind == "equivalent_wishart":
        root = psd_sqrt(A @ A.T + Sigma)
        shift = np.zeros_like(A)
    else:
        raise SpecError(f"unknown model kind {kind!r}")
    v = np.eye(p)[0] if probe is None else np.asarray(probe, dtype=float)

    def task(rep):
        W = sample_noise(noise, p, n, make_rng(seed, rep, ROLE_NOISE))
        X = shift + root @ W
        eig = sym_eig(X @ X.T)
        return np.concatenate([eig.values[:top], (v @ eig.vectors[:, :top]) ** 2])

    samples = np.array(_run_replications(task, replications, threads))
    names = [f"lambda_{i + 1}" for i in range(top)] + [f"overlap_{i + 1}" for i in range(top)]
    sd = samples.std(axis=0, ddof=1) if replications > 1 else np.zeros(samples.shape[1])
    stats = [(nm, float(m), float(s)) for nm, m, s in zip(names, samples.mean(axis=0), sd)]
    return EigenMatchReport(kind, stats, replications, samples)


# ---------------------------------------------------------------------------
# spiked-covariance scree demo


@dataclass
class ScreeDemo:
    eigenvalues: np.ndarray
    limits: list

    def write_csv(self, directory):
        directory = Path(directory)
        write_csv(directory / "scree.csv", ("index", "eigenvalue"),
                  [(i + 1, float(v)) for i, v in enumerate(self.eigenvalues)])
        write_csv(directory / "scree_limits.csv", ("label", "gamma", "kind", "limit"),
                  self.limits)
        return directory


def bbp_limits(d, ell, g1, p, n):
    """Predicted limits of the two eigenvalues fed by the signal and the covariance spike."""
    g = spiked_direction(p, g1)
    Sigma = np.eye(p)
    Sigma[0, 0] += ell
    r = np.zeros(n)
    r[0] = 1.0
    model = EquivalentModel.build(d * np.outer(g, r), Sigma)
    H, c = model.measure, model.c
    bulk = int(np.argmax(H.multiplicities))
    bulk_atom = H.values[bulk]
    edge = bulk_edge(H.bulk(bulk), c)
    out = []
    for label, gamma in zip(("gamma_1", "gamma_2"), spiked_sigma_two_eigs(d, ell, g1)):
        if abs(gamma - bulk_atom) <= 1e-8 * max(1.0, gamma):
            out.append((label, float(gamma), "bulk", float(edge)))
            continue
        cls = classify_spike(gamma, H, c)
        out.append((label, float(gamma), cls.kind.value, float(cls.sample_limit)))
    return out, g, Sigma


def run_bbp_demo(d, ell, g_choice, p, n, seed=0, noise=NoiseLaw.GAUSSIAN):
    """Sample spectrum of ``d g r^T + diag(ell+1, 1, ..., 1)^{1/2} W`` with its predicted limits.

    ``g_choice`` is ``"e1"`` (signal aligned with the covariance spike), ``"e2"``
    (orthogonal) or a float giving the first coordinate of ``g``.
    """
    g1 = {"e1": 1.0, "e2": 0.0}.get(g_choice, g_choice)
    g1 = float(g1)
    limits, g, Sigma = bbp_limits(d, ell, g1, p, n)
    rng = make_rng(seed, 0, ROLE_NOISE)
    r = rng.standard_normal(n)
    r /= np.linalg.norm(r)
    X = d * np.outer(g, r) + np.sqrt(np.diag(Sigma))[:, None] * sample_noise(noise, p, n, rng)
    G = X.T @ X if p > n else X @ X.T
    values = np.sort(np.linalg.eigvalsh(G))[::-1]
    return ScreeDemo(values, limits)


# ---------------------------------------------------------------------------
# theoretical report


@dataclass
class SpikeReport:
    atom: int
    gamma: float
    multiplicity: int
    kind: str
    phi: float
    phi_prime: float
    sample_limit: float
    eta: float
    self_projection: float


@dataclass
class LimitsReport:
    p: int
    n: int
    c: float
    centered: bool
    atoms: list
    spikes: list
    bulk_edge: float
    zeta: np.ndarray = None
    a_seq: np.ndarray = None
    b_seq: np.ndarray = None
    eda_ok: bool = None
    edb_ok: bool = None
    criterion_margins: dict = field(default_factory=dict)

    def lines(self):
        out = [f"p={self.p} n={self.n} c={self.c:.6g} centered={self.centered}",
               "atoms (value x multiplicity): "
               + ", ".join(f"{v:.6g} x {m}" for v, m in self.atoms[:12])
               + (" ..." if len(self.atoms) > 12 else "")]
        for s in self.spikes:
            out.append(f"spike {s.atom}: gamma={s.gamma:.6g} (x{s.multiplicity}) {s.kind} "
                       f"phi={s.phi:.6g} phi'={s.phi_prime:.4g} limit={s.sample_limit:.6g} "
                       f"eta={s.eta:.6g} c_k(k)={s.self_projection:.6g}")
        out.append(f"bulk edge: {self.bulk_edge:.6g}")
        if self.zeta is not None:
            out.append("zeta: " + ", ".join(f"{z:.6g}" for z in self.zeta))
            out.append(f"a_s: {np.round(self.a_seq, 6).tolist()} -> EDA gap condition "
                       f"{'holds' if self.eda_ok else 'fails'}")
            out.append(f"b_s: {np.round(self.b_seq, 6).tolist()} -> EDB gap condition "
                       f"{'holds' if self.edb_ok else 'fails'}")
        for key, val in self.criterion_margins.items():
            out.append(f"{key} = {val:.6g}")
        return out


def idealized_spectrum(model, K):
    """Sample eigenvalues replaced by their limits: spike limits then the bulk edge."""
    zeta = zeta_limits(model, K)
    logs = np.cumsum(np.log(zeta)[::-1])[::-1]
    edge = bulk_edge(model.measure.bulk(model.measure.atoms_covering(K)), model.c)
    spikes = edge + logs
    return np.concatenate([spikes, np.full(model.p - K, edge)])


def criterion_margins(model, K):
    """Scaled criterion differences at the idealized spectrum around the true ``K``."""
    lam = EigenvalueSeq(idealized_spectrum(model, K), model.p, model.n)
    w = K + 1
    a, b = eda(lam, w).values, edb(lam, w).values
    out = {}
    for k in range(1, K):
        out[f"(EDA_{k} - EDA_{K})/n"] = float(a[k - 1] - a[K - 1])
        out[f"(EDB_{k} - EDB_{K})/n"] = float(b[k - 1] - b[K - 1])
    out[f"(EDA_{K + 1} - EDA_{K})/n"] = float(a[K] - a[K - 1])
    out[f"(EDB_{K + 1} - EDB_{K})/n"] = float(b[K] - b[K - 1])
    return out


def limits_report(config):
    """Deterministic population-side summary of a scenario."""
    model_spec = config.model_spec()
    A, _ = build_signal(model_spec.mixture)
    Sigma = build_covariance(model_spec.covariance, config.p)
    model = population_model(A, Sigma, config.centered)
    H, c, n = model.measure, model.c, model.n
    K = config.declared_K
    n_spike_atoms = H.atoms_covering(K)
    spikes = []
    for k in range(1, n_spike_atoms + 1):
        gamma = H.values[k - 1]
        cls = classify_spike(gamma, H, c)
        spikes.append(SpikeReport(k, float(gamma), int(H.multiplicities[k - 1]), cls.kind.value,
                                  cls.phi_value, cls.phi_derivative, cls.sample_limit,
                                  eta(k, H, n), float(projection_coeffs(k, H, n)[k - 1])))
    report = LimitsReport(config.p, config.n, c, config.centered, H.atoms, spikes,
                          bulk_edge(H.bulk(n_spike_atoms), c))
    if all(s.kind == "distant" for s in spikes):
        zeta = zeta_limits(model, K)
        gaps = gap_sequences(zeta[1:], config.p, config.n)
        report.zeta, report.a_seq, report.b_seq = zeta, gaps.a_seq, gaps.b_seq
        report.eda_ok, report.edb_ok = gaps.eda_ok, gaps.edb_ok
        if config.p <= config.n and config.p > K + 2:
            report.criterion_margins = criterion_margins(model, K)
    return report

