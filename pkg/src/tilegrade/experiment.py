"""Cross-validated comparison of grading conditions on a synthetic cohort.

Four conditions are scored per fold against the true instabilities:

``BM_GT``       true feature labels, fully observed
``BM_FX_low``   every detection at or above ``z_low`` taken as present
``BM_FX_high``  only detections at or above ``z_high``
``BM_refined``  the counterfactual refinement loop
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid
from .fileio import dumps_canonical
from .learning import LearningConfig, fit_cpds
from .metrics import cohens_kappa, kfold_split, roc_auc
from .network import AGE, PRESENT, BayesianNetwork, feature_nodes, load_network
from .refinement import (
    EvidenceMode,
    ScoredDetections,
    ThresholdConfig,
    detections_to_sets,
    evidence_from_detections,
    grade_from_scores,
    predict_instabilities,
    refine,
    tile_from_instabilities,
)
from .simulator import (
    PatientTruth,
    cohort_dataset,
    default_profile,
    profile_with_overrides,
    sample_cohort,
    simulate_cohort_detections,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CONDITIONS = ("BM_GT", "BM_FX_low", "BM_FX_high", "BM_refined")
INSTABILITIES = ("R", "T")
DATA_DIR = Path(__file__).parent / "data"


def resolve_fixture(ref: str | Path, base: Path | None = None) -> Path:
    """``builtin:<name>`` names a shipped fixture; other paths resolve against ``base``."""
    ref = str(ref)
    if ref.startswith("builtin:"):
        return DATA_DIR / f"{ref.split(':', 1)[1]}.json"
    path = Path(ref)
    if not path.is_absolute() and base is not None:
        path = base / path
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    fixture: str = "builtin:pelvic"
    n: int = 2000
    seed: int = 0
    k: int = 5
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    mode: EvidenceMode = EvidenceMode.PRESENT_ONLY
    pseudocount: float = 1.0
    profile_overrides: Mapping[str, Mapping] = field(default_factory=dict)
    batch: bool = False
    base_dir: str | None = None

    def __post_init__(self):
        if self.n < 2 or self.k < 2 or self.n < self.k:
            raise ConfigInvalid(f"need n >= k >= 2 (got n={self.n}, k={self.k})")
        if self.pseudocount < 0:
            raise ConfigInvalid("pseudocount must be non-negative")
        object.__setattr__(self, "mode", EvidenceMode(self.mode))

    @property
    def fixture_path(self) -> Path:
        return resolve_fixture(self.fixture, Path(self.base_dir) if self.base_dir else None)

    def to_dict(self) -> dict:
        return {
            "fixture": self.fixture,
            "n": self.n,
            "seed": self.seed,
            "k": self.k,
            "thresholds": self.thresholds.to_dict(),
            "evidence_mode": self.mode.value,
            "pseudocount": self.pseudocount,
            "profile_overrides": {k: dict(v) for k, v in sorted(self.profile_overrides.items())},
            "batch": self.batch,
        }


def config_from_mapping(doc: Mapping, base_dir: str | None = None) -> ExperimentConfig:
    known = {"fixture", "n", "seed", "k", "thresholds", "evidence_mode", "pseudocount", "profile", "batch"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigInvalid(f"unknown configuration keys {sorted(unknown)}")
    try:
        thresholds = ThresholdConfig(**dict(doc.get("thresholds", {})))
        return ExperimentConfig(
            fixture=str(doc.get("fixture", "builtin:pelvic")),
            n=int(doc.get("n", 2000)),
            seed=int(doc.get("seed", 0)),
            k=int(doc.get("k", 5)),
            thresholds=thresholds,
            mode=EvidenceMode(doc.get("evidence_mode", EvidenceMode.PRESENT_ONLY.value)),
            pseudocount=float(doc.get("pseudocount", 1.0)),
            profile_overrides=dict(doc.get("profile", {})),
            batch=bool(doc.get("batch", False)),
            base_dir=base_dir,
        )
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None
    return config_from_mapping(doc, base_dir=str(path.parent))


@dataclass
class PreparedExperiment:
    """Cohort, detections, folds and per-fold fitted models, shared across thresholds."""

    config: ExperimentConfig
    generator: BayesianNetwork
    cohort: list[PatientTruth]
    detections: list[ScoredDetections]
    folds: list[tuple[np.ndarray, np.ndarray]]
    models: list[BayesianNetwork]

    @property
    def truth_r(self) -> np.ndarray:
        return np.array([p.r_unstable for p in self.cohort])

    @property
    def truth_t(self) -> np.ndarray:
        return np.array([p.t_unstable for p in self.cohort])


def prepare(config: ExperimentConfig) -> PreparedExperiment:
    path = config.fixture_path
    if not path.is_file():
        raise ConfigInvalid(f"fixture not found: {path}")
    generator = load_network(path)
    features = feature_nodes(generator)
    profile = profile_with_overrides(default_profile(features), config.profile_overrides)
    cohort = sample_cohort(generator, config.n, config.seed)
    detections = simulate_cohort_detections(cohort, profile, config.seed)
    folds = kfold_split(config.n, config.k, config.seed)
    data = cohort_dataset(cohort, generator)
    learning = LearningConfig(config.pseudocount)
    models = [fit_cpds(generator.structure, data.subset(train), learning) for train, _ in folds]
    return PreparedExperiment(config, generator, cohort, detections, folds, models)


def _gt_scores(model: BayesianNetwork, patient: PatientTruth) -> tuple[float, float]:
    present = [fx for fx, v in patient.features.items() if v == PRESENT]
    ev = evidence_from_detections(model, present, EvidenceMode.CLOSED_WORLD)
    if AGE in model:
        ev = ev.merge({AGE: patient.elderly})
    return predict_instabilities(model, ev)


def _detection_scores(model, det: ScoredDetections, fx, mode) -> tuple[float, float]:
    ev = evidence_from_detections(model, fx, mode)
    if AGE in model and det.elderly is not None:
        ev = ev.merge({AGE: det.elderly})
    return predict_instabilities(model, ev)


def score_conditions(
    prep: PreparedExperiment,
    fold: int,
    thresholds: ThresholdConfig,
    conditions: Sequence[str] = CONDITIONS,
) -> dict[str, np.ndarray]:
    """``p(R unstable), p(T unstable)`` per test patient, shape (n_test, 2), per condition."""
    model = prep.models[fold]
    _, test = prep.folds[fold]
    mode = prep.config.mode
    out = {c: np.empty((test.size, 2)) for c in conditions}
    for row, i in enumerate(test):
        det = prep.detections[i]
        sets = detections_to_sets(det, thresholds)
        for c in conditions:
            if c == "BM_GT":
                s = _gt_scores(model, prep.cohort[i])
            elif c == "BM_FX_low":
                s = _detection_scores(model, det, sets.fx_high | sets.fx_low, mode)
            elif c == "BM_FX_high":
                s = _detection_scores(model, det, sets.fx_high, mode)
            elif c == "BM_refined":
                s = refine(model, det, thresholds, mode, batch=prep.config.batch).scores_after
            else:
                raise ConfigInvalid(f"unknown condition {c!r}")
            out[c][row] = s
    return out


def _condition_metrics(scores: np.ndarray, r: np.ndarray, t: np.ndarray) -> dict:
    pred_r = (scores[:, 0] > 0.5).astype(int)
    pred_t = (scores[:, 1] > 0.5).astype(int)
    pred_grade = [tile_from_instabilities(a, b).value for a, b in zip(pred_r, pred_t)]
    true_grade = [tile_from_instabilities(a, b).value for a, b in zip(r, t)]
    return {
        "R": {"auc": roc_auc(scores[:, 0], r), "kappa": cohens_kappa(pred_r.tolist(), r.tolist())},
        "T": {"auc": roc_auc(scores[:, 1], t), "kappa": cohens_kappa(pred_t.tolist(), t.tolist())},
        "tile_kappa": cohens_kappa(pred_grade, true_grade),
    }


@dataclass(frozen=True)
class ExperimentReport:
    config: Mapping
    folds: tuple[Mapping, ...]
    average: Mapping

    @property
    def k(self) -> int:
        return len(self.folds)

    def metric(self, condition: str, instability: str, name: str = "auc") -> float:
        return self.average[condition][instability][name]

    def to_dict(self) -> dict:
        return {"config": dict(self.config), "folds": list(self.folds), "average": dict(self.average)}

    def to_json(self) -> str:
        return dumps_canonical(self.to_dict())

    def summary(self) -> str:
        """Plain-text table: AUC and kappa rows, R/T columns per condition."""
        head = f"{'Metrics':<8}" + "".join(f"| {c:^15}" for c in CONDITIONS)
        sub = f"{'':<8}" + "".join(f"| {'R':^7}{'T':^8}" for _ in CONDITIONS)
        lines = [head, sub, "-" * len(head)]
        for name, label in (("auc", "AUC"), ("kappa", "Kappa")):
            cells = "".join(
                f"| {self.average[c]['R'][name]:^7.3f}{self.average[c]['T'][name]:^8.3f}"
                for c in CONDITIONS
            )
            lines.append(f"{label:<8}" + cells)
        lines.append("")
        lines.append(
            f"{self.k}-fold averages; n={self.config['n']}, seed={self.config['seed']}, "
            f"z_high={self.config['thresholds']['z_high']}, z_low={self.config['thresholds']['z_low']}"
        )
        return "\n".join(lines) + "\n"


def _average(folds: Sequence[Mapping]) -> dict:
    avg = {}
    for c in CONDITIONS:
        if c not in folds[0]:
            continue
        avg[c] = {
            inst: {m: math.fsum(f[c][inst][m] for f in folds) / len(folds) for m in ("auc", "kappa")}
            for inst in INSTABILITIES
        }
        avg[c]["tile_kappa"] = math.fsum(f[c]["tile_kappa"] for f in folds) / len(folds)
    return avg


def evaluate_prepared(prep: PreparedExperiment, thresholds: ThresholdConfig | None = None) -> ExperimentReport:
    thresholds = thresholds or prep.config.thresholds
    folds = []
    r_all, t_all = prep.truth_r, prep.truth_t
    for f, (_, test) in enumerate(prep.folds):
        scores = score_conditions(prep, f, thresholds)
        folds.append({c: _condition_metrics(scores[c], r_all[test], t_all[test]) for c in CONDITIONS})
    config = replace(prep.config, thresholds=thresholds).to_dict()
    return ExperimentReport(config, tuple(folds), _average(folds))


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return evaluate_prepared(prepare(config))


SWEEP_COLUMNS = ("z", "AUC_R", "AUC_T", "AUC_R_refined", "AUC_T_refined", "AUC_R_GT", "AUC_T_GT")


def check_sweep_values(z_values: Sequence[float], z_high: float) -> list[float]:
    z_values = [float(z) for z in z_values]
    if not z_values:
        raise ConfigInvalid("sweep needs at least one z value")
    if any(b <= a for a, b in zip(z_values, z_values[1:])):
        raise ConfigInvalid("sweep z values must be strictly increasing")
    if any(not (0.0 <= z < z_high) for z in z_values):
        raise ConfigInvalid(f"sweep z values must lie in [0, z_high={z_high})")
    return z_values


def sweep_prepared(prep: PreparedExperiment, z_values: Sequence[float]) -> list[dict]:
    """AUC of direct inference on detections >= z, of refinement with floor z, and of GT."""
    base = prep.config.thresholds
    z_values = check_sweep_values(z_values, base.z_high)
    r_all, t_all = prep.truth_r, prep.truth_t
    rows = []
    for z in z_values:
        thresholds = ThresholdConfig(base.z_high, z, base.z_promote)
        acc = {c: {"R": [], "T": []} for c in ("BM_FX_low", "BM_refined", "BM_GT")}
        for f, (_, test) in enumerate(prep.folds):
            scores = score_conditions(prep, f, thresholds, ("BM_FX_low", "BM_refined", "BM_GT"))
            for c, s in scores.items():
                acc[c]["R"].append(roc_auc(s[:, 0], r_all[test]))
                acc[c]["T"].append(roc_auc(s[:, 1], t_all[test]))
        mean = {c: {i: math.fsum(v) / len(v) for i, v in d.items()} for c, d in acc.items()}
        rows.append({
            "z": z,
            "AUC_R": mean["BM_FX_low"]["R"],
            "AUC_T": mean["BM_FX_low"]["T"],
            "AUC_R_refined": mean["BM_refined"]["R"],
            "AUC_T_refined": mean["BM_refined"]["T"],
            "AUC_R_GT": mean["BM_GT"]["R"],
            "AUC_T_GT": mean["BM_GT"]["T"],
        })
    return rows


def sweep_z_low(config: ExperimentConfig, z_values: Sequence[float]) -> list[dict]:
    check_sweep_values(z_values, config.thresholds.z_high)
    return sweep_prepared(prepare(config), z_values)


def format_sweep_tsv(rows: Sequence[Mapping]) -> str:
    lines = ["\t".join(SWEEP_COLUMNS)]
    for row in rows:
        lines.append("\t".join(repr(float(row[c])) for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_z_range(text: str) -> list[float]:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigInvalid(f"bad z range {text!r}; expected start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigInvalid("z step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]
