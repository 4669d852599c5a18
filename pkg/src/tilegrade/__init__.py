"""Bayesian-network tile grading of pelvic ring injuries from detector output."""

from .inference import enumerate_joint, map_state, query_marginal
from .learning import LearningConfig, fit_cpds, ingest_cohort
from .metrics import cohens_kappa, kfold_split, roc_auc, roc_curve
from .network import BayesianNetwork, Cpd, Evidence, NetworkStructure, build_network, load_network, save_network
from .refinement import EvidenceMode, ScoredDetections, ThresholdConfig, TileGrade, candidate_fractures, refine

__version__ = "0.1.0"

__all__ = [
    "BayesianNetwork", "Cpd", "Evidence", "EvidenceMode", "LearningConfig", "NetworkStructure",
    "ScoredDetections", "ThresholdConfig", "TileGrade", "build_network", "candidate_fractures",
    "cohens_kappa", "enumerate_joint", "fit_cpds", "ingest_cohort", "kfold_split", "load_network",
    "map_state", "query_marginal", "refine", "roc_auc", "roc_curve", "save_network",
]
