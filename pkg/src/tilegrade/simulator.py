"""Synthetic cohorts and a simulated fracture detector.

Random streams come from Philox4x64-10 (numpy ``Philox``), keyed by
``(seed, stream)`` so that the cohort, the per-patient detector draws and
the fold shuffles never share a stream. Beta confidences are drawn by
inverse CDF (``scipy.special.betaincinv``) on the generator's uniforms.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np
from scipy.special import betaincinv

from .errors import MissingRequiredNode, ProfileMismatch
from .learning import ELDERLY_AGE, Dataset
from .network import AGE, PRESENT, ROTATIONAL, TRANSLATIONAL, BayesianNetwork, feature_nodes
from .refinement import ScoredDetections

STREAM_COHORT = 0
STREAM_DETECTOR = 1
STREAM_FOLDS = 2


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), stream]))


@dataclass(frozen=True)
class PatientTruth:
    patient_id: str
    elderly: int
    r_unstable: int
    t_unstable: int
    features: Mapping[str, int]
    age_years: int

    def __post_init__(self):
        object.__setattr__(self, "features", MappingProxyType(dict(self.features)))

    def to_record(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "age": self.age_years,
            "R": self.r_unstable,
            "T": self.t_unstable,
            "features": dict(self.features),
        }


@dataclass(frozen=True)
class ClassProfile:
    tp_rate: float
    fp_rate: float
    tp_confidence: tuple[float, float] = (8.0, 2.0)
    fp_confidence: tuple[float, float] = (2.0, 5.0)

    def __post_init__(self):
        for name in ("tp_rate", "fp_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("tp_confidence", "fp_confidence"):
            shape = tuple(float(x) for x in getattr(self, name))
            if len(shape) != 2 or min(shape) <= 0:
                raise ValueError(f"{name} needs two positive Beta shapes")
            object.__setattr__(self, name, shape)

    @property
    def tp_mean(self) -> float:
        a, b = self.tp_confidence
        return a / (a + b)


DetectorProfile = Mapping[str, ClassProfile]

# per-class (tp_rate, fp_rate). Classes with the fewest training examples
# (sacral, diastatic sacral, parallel SI, ISp) get the lowest sensitivity
# and the most false alarms.
_DEFAULT_RATES = {
    "PSD": (0.9, 0.03),
    "divergent_SI": (0.6, 0.1),
    "ring_fx": (0.85, 0.06),
    "parallel_SI": (0.6, 0.1),
    "sacral_fx": (0.6, 0.1),
    "diastatic_sacral_fx": (0.6, 0.1),
    "ISp": (0.6, 0.1),
}
_WEAK_TP_CONFIDENCE = (6.0, 3.0)


def default_profile(feature_classes: Sequence[str]) -> dict[str, ClassProfile]:
    """Fixed per-class detector behaviour.

    Anteriorly divergent SI diastasis is the weakest class: lowest
    true-positive confidence (Beta(6, 3), mean 2/3, against Beta(8, 2) for
    the rest), lowest sensitivity and highest false-alarm rate. Classes
    without a table entry get middle-of-range rates.
    """
    profile = {}
    for fx in feature_classes:
        tp, fp = _DEFAULT_RATES.get(fx, (0.75, 0.05))
        tp_conf = _WEAK_TP_CONFIDENCE if fx == "divergent_SI" else (8.0, 2.0)
        profile[fx] = ClassProfile(tp, fp, tp_conf, (2.0, 5.0))
    return profile


def profile_with_overrides(base: Mapping[str, ClassProfile], overrides: Mapping[str, Mapping]) -> dict[str, ClassProfile]:
    out = dict(base)
    for fx, fields in overrides.items():
        if fx not in out:
            raise ProfileMismatch(f"override for unknown class {fx!r}")
        cur = out[fx]
        out[fx] = ClassProfile(
            float(fields.get("tp_rate", cur.tp_rate)),
            float(fields.get("fp_rate", cur.fp_rate)),
            tuple(fields.get("tp_confidence", cur.tp_confidence)),
            tuple(fields.get("fp_confidence", cur.fp_confidence)),
        )
    return out


def _require_nodes(network: BayesianNetwork) -> list[str]:
    missing = [v for v in (ROTATIONAL, TRANSLATIONAL) if v not in network]
    features = feature_nodes(network)
    if missing or not features:
        raise MissingRequiredNode(
            f"generating network needs R, T and at least one feature node (missing {missing})"
        )
    return features


def sample_states(network: BayesianNetwork, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Ancestral sampling of ``n`` joint states, one uniform per node per patient."""
    states: dict[str, np.ndarray] = {}
    for vid in network.topological_order():
        cpd = network.cpd(vid)
        if cpd.parent_order:
            cards = [network.cardinality(p) for p in cpd.parent_order]
            rows = np.ravel_multi_index([states[p] for p in cpd.parent_order], cards)
        else:
            rows = np.zeros(n, dtype=np.int64)
        cum = np.cumsum(cpd.table, axis=1)
        u = rng.random(n)
        # state k is chosen when cum[k-1] <= u < cum[k]; the last state absorbs rounding
        states[vid] = np.minimum(
            (u[:, None] >= cum[rows, :-1]).sum(axis=1), network.cardinality(vid) - 1
        ).astype(np.int64)
    return states


def sample_cohort(network: BayesianNetwork, n: int, seed: int) -> list[PatientTruth]:
    features = _require_nodes(network)
    if n < 1:
        raise ValueError("cohort size must be at least 1")
    rng = make_rng(seed, STREAM_COHORT)
    states = sample_states(network, n, rng)
    if AGE in states:
        elderly = states[AGE]
    else:
        elderly = None
    young = rng.integers(18, ELDERLY_AGE, size=n)
    old = rng.integers(ELDERLY_AGE, 96, size=n)
    if elderly is None:
        ages = np.where(rng.random(n) < 0.3, old, young)
        elderly = (ages >= ELDERLY_AGE).astype(np.int64)
    else:
        ages = np.where(elderly == 1, old, young)
    width = len(str(n - 1))
    cohort = []
    for i in range(n):
        cohort.append(PatientTruth(
            patient_id=f"P{i:0{width}d}",
            elderly=int(elderly[i]),
            r_unstable=int(states[ROTATIONAL][i]),
            t_unstable=int(states[TRANSLATIONAL][i]),
            features={fx: int(states[fx][i]) for fx in features},
            age_years=int(ages[i]),
        ))
    return cohort


def simulate_detections(truth: PatientTruth, profile: Mapping[str, ClassProfile], seed: int) -> ScoredDetections:
    """Detector output for one patient.

    Each class consumes exactly two uniforms (emit?, confidence) in sorted
    class order, whether or not it fires, so streams stay aligned.
    """
    missing = sorted(set(truth.features) - set(profile))
    if missing:
        raise ProfileMismatch(f"detector profile lacks classes {missing}")
    rng = make_rng(seed, STREAM_DETECTOR)
    classes = sorted(truth.features)
    u = rng.random((len(classes), 2))
    scores = {}
    for (u_emit, u_conf), fx in zip(u, classes):
        prof = profile[fx]
        if truth.features[fx] == PRESENT:
            rate, (a, b) = prof.tp_rate, prof.tp_confidence
        else:
            rate, (a, b) = prof.fp_rate, prof.fp_confidence
        if u_emit < rate:
            scores[fx] = float(np.clip(betaincinv(a, b, u_conf), 0.0, 1.0))
    return ScoredDetections(truth.patient_id, scores, truth.elderly)


def simulate_cohort_detections(
    cohort: Sequence[PatientTruth], profile: Mapping[str, ClassProfile], seed: int
) -> list[ScoredDetections]:
    # patient i draws from seed + i
    return [simulate_detections(p, profile, seed + i) for i, p in enumerate(cohort)]


def cohort_dataset(cohort: Sequence[PatientTruth], network: BayesianNetwork) -> Dataset:
    """Complete-data table over the network's variables for fitting."""
    rows = []
    for p in cohort:
        row = []
        for vid in network.ids:
            if vid == AGE:
                row.append(p.elderly)
            elif vid == ROTATIONAL:
                row.append(p.r_unstable)
            elif vid == TRANSLATIONAL:
                row.append(p.t_unstable)
            else:
                row.append(p.features[vid])
        rows.append(row)
    return Dataset(network.ids, np.array(rows, dtype=np.int64).reshape(len(rows), len(network.ids)),
                   tuple(p.patient_id for p in cohort))
