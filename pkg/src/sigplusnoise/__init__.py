"""Spectral limits, cluster-count criteria and spectral clustering for signal-plus-noise matrices."""
from .clustercount import (ClusterCountEstimator, CriterionResult, EigenvalueSeq,
                           GapConditionReport, default_w, eda, edb, gap_report,
                           gap_sequences, pseudo_eda, pseudo_edb, theta_stats, zeta_limits)
from .exceptions import (ClassificationError, DegenerateSpectrumError, DimensionError,
                         DomainError, IntegrationError, NotPSDError, NumericError, PoleError,
                         ReplicationError, RootIsolationError, SigPlusNoiseError, SpecError)
from .harness import (EigenMatchReport, ScenarioConfig, SelectionTable, limits_report,
                      run_bbp_demo, run_eigen_match, run_selection)
from .matkernel import Side, SymEigResult, gram, psd_sqrt, sym_eig
from .modelgen import (CovarianceSpec, LabeledSample, MixtureSpec, NoiseLaw, assemble,
                       build_covariance, build_signal, case_preset, population_model,
                       sample_noise)
from .rmtlimits import (AspectRatio, EquivalentModel, SpectralMeasure, SpikeClassification,
                        StieltjesSolution, classical_locations, classify_spike,
                        det_equiv_D_quadform, det_equiv_tildeD_quadform, eta,
                        left_projection_limit, omega_roots, phi, phi_prime,
                        projection_coeffs, right_overlap_limit, solve_coupled_deltas,
                        solve_rtilde, spiked_sigma_two_eigs, support_endpoints)
from .speclust import (Clustering, SpectralMixtureClustering, embed, gap_statistic_k,
                       kmeans_rows, misclustering_rate, silhouette_k)

__version__ = "0.1.0"

__all__ = [
    "ClusterCountEstimator", "CriterionResult", "EigenvalueSeq", "GapConditionReport",
    "default_w", "eda", "edb", "gap_report", "gap_sequences", "pseudo_eda", "pseudo_edb",
    "theta_stats", "zeta_limits", "ClassificationError", "DegenerateSpectrumError",
    "DimensionError", "DomainError", "IntegrationError", "NotPSDError", "NumericError",
    "PoleError", "ReplicationError", "RootIsolationError", "SigPlusNoiseError", "SpecError",
    "EigenMatchReport", "ScenarioConfig", "SelectionTable", "limits_report", "run_bbp_demo",
    "run_eigen_match", "run_selection", "Side", "SymEigResult", "gram", "psd_sqrt", "sym_eig",
    "CovarianceSpec", "LabeledSample", "MixtureSpec", "NoiseLaw", "assemble",
    "build_covariance", "build_signal", "case_preset", "population_model", "sample_noise",
    "AspectRatio", "EquivalentModel", "SpectralMeasure", "SpikeClassification",
    "StieltjesSolution", "classical_locations", "classify_spike", "det_equiv_D_quadform",
    "det_equiv_tildeD_quadform", "eta", "left_projection_limit", "omega_roots", "phi",
    "phi_prime", "projection_coeffs", "right_overlap_limit", "solve_coupled_deltas",
    "solve_rtilde", "spiked_sigma_two_eigs", "support_endpoints", "Clustering",
    "SpectralMixtureClustering", "embed", "gap_statistic_k", "kmeans_rows",
    "misclustering_rate", "silhouette_k", "__version__",
]
