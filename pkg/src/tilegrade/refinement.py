"""Tile grading from thresholded detections, with counterfactual refinement.

The refinement loop asks, for each hypothesised grade, which undetected
findings the model expects to co-occur with the high-confidence ones, and
promotes any of those that the detector did report at lower confidence.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

from .errors import UnknownFeature, ZeroProbabilityEvidence
from .fileio import atomic_write_text, dumps_canonical, read_json
from .inference import query_marginal
from .network import (
    ABSENT,
    AGE,
    PRESENT,
    ROTATIONAL,
    STABLE,
    TRANSLATIONAL,
    UNSTABLE,
    BayesianNetwork,
    Evidence,
    feature_nodes,
)


class TileGrade(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"

    def __str__(self):
        return self.value


GRADE_ORDER = (TileGrade.A, TileGrade.B, TileGrade.C)


class EvidenceMode(str, enum.Enum):
    PRESENT_ONLY = "present_only"
    CLOSED_WORLD = "closed_world"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ScoredDetections:
    """Per-class detector confidences for one patient.

    A class missing from ``scores`` had no detection. ``elderly`` is the
    binned age covariate, used as evidence when the network has an age node.
    """

    patient_id: str
    scores: Mapping[str, float]
    elderly: int | None = None

    def __post_init__(self):
        scores = {}
        for fx, conf in dict(self.scores).items():
            conf = float(conf)
            if not (0.0 <= conf <= 1.0):
                raise ValueError(f"confidence {conf!r} for {fx!r} is outside [0, 1]")
            scores[fx] = conf
        object.__setattr__(self, "scores", MappingProxyType(scores))


@dataclass(frozen=True)
class DetectionSet:
    fx_high: frozenset[str]
    fx_low: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "fx_high", frozenset(self.fx_high))
        object.__setattr__(self, "fx_low", frozenset(self.fx_low))
        if self.fx_high & self.fx_low:
            raise ValueError("fx_high and fx_low must be disjoint")


@dataclass(frozen=True)
class ThresholdConfig:
    z_high: float = 0.95
    z_low: float = 0.5
    z_promote: float | None = None  # defaults to z_high

    def __post_init__(self):
        if self.z_promote is None:
            object.__setattr__(self, "z_promote", self.z_high)
        if not 0.0 < self.z_high <= 1.0:
            raise ValueError("z_high must lie in (0, 1]")
        if not 0.0 <= self.z_low < 1.0:
            raise ValueError("z_low must lie in [0, 1)")
        if not 0.0 < self.z_promote <= 1.0:
            raise ValueError("z_promote must lie in (0, 1]")
        if not self.z_low < self.z_high:
            raise ValueError("z_low must be below z_high")

    def to_dict(self) -> dict:
        return {"z_high": self.z_high, "z_low": self.z_low, "z_promote": self.z_promote}


@dataclass(frozen=True)
class Promotion:
    feature: str
    probability: float
    grade: TileGrade


@dataclass(frozen=True)
class RefinementResult:
    patient_id: str
    initial_grade: TileGrade
    final_grade: TileGrade
    promoted: tuple[Promotion, ...]
    fx_high_initial: frozenset[str]
    fx_low_initial: frozenset[str]
    fx_high_final: frozenset[str]
    scores_before: tuple[float, float]  # (p(R unstable), p(T unstable))
    scores_after: tuple[float, float]
    candidates: tuple[tuple[TileGrade, tuple[tuple[str, float], ...]], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "initial_grade": self.initial_grade.value,
            "final_grade": self.final_grade.value,
            "promoted": [
                {"feature": p.feature, "probability": p.probability, "grade": p.grade.value}
                for p in self.promoted
            ],
            "fx_high_initial": sorted(self.fx_high_initial),
            "fx_low_initial": sorted(self.fx_low_initial),
            "fx_high_final": sorted(self.fx_high_final),
            "instability_before": {"R": self.scores_before[0], "T": self.scores_before[1]},
            "instability_after": {"R": self.scores_after[0], "T": self.scores_after[1]},
            "candidates": {
                g.value: [{"feature": f, "probability": p} for f, p in cands]
                for g, cands in self.candidates
            },
        }


def detections_to_sets(detections: ScoredDetections, thresholds: ThresholdConfig) -> DetectionSet:
    high, low = set(), set()
    for fx, conf in detections.scores.items():
        if conf >= thresholds.z_high:
            high.add(fx)
        elif conf >= thresholds.z_low:
            low.add(fx)
    return DetectionSet(frozenset(high), frozenset(low))


def _check_features(network: BayesianNetwork, features: Iterable[str]) -> list[str]:
    known = feature_nodes(network)
    unknown = sorted(set(features) - set(known))
    if unknown:
        raise UnknownFeature(f"unknown feature classes {unknown}")
    return known


def covariate_evidence(network: BayesianNetwork, elderly: int | None) -> Evidence:
    if elderly is None or AGE not in network:
        return Evidence()
    return Evidence({AGE: int(elderly)})


def evidence_from_detections(
    network: BayesianNetwork,
    fx_high: Iterable[str],
    mode: EvidenceMode = EvidenceMode.PRESENT_ONLY,
) -> Evidence:
    """Observe every ``fx_high`` member as present.

    In closed-world mode the remaining feature nodes are observed absent;
    otherwise they stay unobserved.
    """
    fx_high = set(fx_high)
    features = _check_features(network, fx_high)
    mode = EvidenceMode(mode)
    assignments = {fx: PRESENT for fx in fx_high}
    if mode is EvidenceMode.CLOSED_WORLD:
        assignments.update({fx: ABSENT for fx in features if fx not in fx_high})
    return Evidence(assignments)


def tile_from_instabilities(r: int, t: int) -> TileGrade:
    # (stable R, unstable T) is not a named grade; translational instability dominates
    if t == UNSTABLE:
        return TileGrade.C
    return TileGrade.B if r == UNSTABLE else TileGrade.A


_GRADE_EVIDENCE = {
    TileGrade.A: {ROTATIONAL: STABLE, TRANSLATIONAL: STABLE},
    TileGrade.B: {ROTATIONAL: UNSTABLE, TRANSLATIONAL: STABLE},
    TileGrade.C: {ROTATIONAL: UNSTABLE, TRANSLATIONAL: UNSTABLE},
}


def tile_to_evidence(grade: TileGrade) -> Evidence:
    return Evidence(_GRADE_EVIDENCE[TileGrade(grade)])


def predict_instabilities(network: BayesianNetwork, evidence: Evidence) -> tuple[float, float]:
    """Posterior probabilities that R and T are unstable."""
    m = query_marginal(network, evidence, [ROTATIONAL, TRANSLATIONAL])
    return float(m[ROTATIONAL][UNSTABLE]), float(m[TRANSLATIONAL][UNSTABLE])


def grade_from_scores(p_r: float, p_t: float) -> TileGrade:
    # per-instability argmax; exactly 0.5 resolves to stable
    return tile_from_instabilities(int(p_r > 0.5), int(p_t > 0.5))


def candidate_fractures(
    network: BayesianNetwork,
    fx_high: Iterable[str],
    grade: TileGrade,
    covariates: Evidence | None = None,
) -> list[tuple[str, float]]:
    """``p(fx present | fx_high, grade)`` for every feature not already in ``fx_high``.

    Undetected features are left unobserved here whatever the grading mode,
    since observing them would pin the very probabilities being asked for.
    Sorted by descending probability, then by feature id.
    """
    fx_high = set(fx_high)
    features = _check_features(network, fx_high)
    evidence = evidence_from_detections(network, fx_high).merge(tile_to_evidence(grade))
    if covariates:
        evidence = evidence.merge(covariates)
    targets = [fx for fx in features if fx not in fx_high]
    if not targets:
        return []
    m = query_marginal(network, evidence, targets)
    out = [(fx, float(m[fx][PRESENT])) for fx in targets]
    out.sort(key=lambda item: (-item[1], item[0]))
    return out


def refine(
    network: BayesianNetwork,
    detections: ScoredDetections,
    thresholds: ThresholdConfig | None = None,
    mode: EvidenceMode = EvidenceMode.PRESENT_ONLY,
    batch: bool = False,
) -> RefinementResult:
    """Grade a patient, promote likely-missed low-confidence findings, re-grade.

    Grades are visited in the order A, B, C. By default a promotion is
    applied at once, so later grades condition on it; ``batch=True`` defers
    all promotions until every grade has been queried.
    """
    thresholds = thresholds or ThresholdConfig()
    mode = EvidenceMode(mode)
    _check_features(network, detections.scores)
    sets = detections_to_sets(detections, thresholds)
    covariates = covariate_evidence(network, detections.elderly)

    initial_ev = evidence_from_detections(network, sets.fx_high, mode).merge(covariates)
    before = predict_instabilities(network, initial_ev)
    initial_grade = grade_from_scores(*before)

    high, low = set(sets.fx_high), set(sets.fx_low)
    promoted: list[Promotion] = []
    pending: list[Promotion] = []
    trace = []
    for grade in GRADE_ORDER:
        try:
            cands = candidate_fractures(network, high, grade, covariates)
        except ZeroProbabilityEvidence:
            # the findings rule this grade out; nothing to suggest under it
            cands = []
        trace.append((grade, tuple(cands)))
        for fx, p in cands:
            if p > thresholds.z_promote and fx in low:
                if batch:
                    if all(q.feature != fx for q in pending):
                        pending.append(Promotion(fx, p, grade))
                else:
                    high.add(fx)
                    low.discard(fx)
                    promoted.append(Promotion(fx, p, grade))
    for promo in pending:
        high.add(promo.feature)
        low.discard(promo.feature)
        promoted.append(promo)

    if promoted:
        final_ev = evidence_from_detections(network, high, mode).merge(covariates)
        after = predict_instabilities(network, final_ev)
    else:
        after = before
    return RefinementResult(
        patient_id=detections.patient_id,
        initial_grade=initial_grade,
        final_grade=grade_from_scores(*after),
        promoted=tuple(promoted),
        fx_high_initial=sets.fx_high,
        fx_low_initial=sets.fx_low,
        fx_high_final=frozenset(high),
        scores_before=before,
        scores_after=after,
        candidates=tuple(trace),
    )


# --- detections and refinement report files ----------------------------------

DETECTIONS_FORMAT = "tilegrade-detections"


def detections_to_record(det: ScoredDetections, age: int | None = None) -> dict:
    rec = {
        "patient_id": det.patient_id,
        "detections": [
            {"class": fx, "confidence": conf} for fx, conf in sorted(det.scores.items())
        ],
    }
    if age is not None:
        rec["age"] = int(age)
    if det.elderly is not None:
        rec["elderly"] = int(det.elderly)
    return rec


def record_to_detections(rec: Mapping, elderly_age: int = 65) -> ScoredDetections:
    scores: dict[str, float] = {}
    for d in rec.get("detections", []):
        fx, conf = d["class"], float(d["confidence"])
        # several boxes of one class collapse to the most confident one
        scores[fx] = max(conf, scores.get(fx, -math.inf))
    elderly = rec.get("elderly")
    if elderly is None and rec.get("age") is not None:
        elderly = int(int(rec["age"]) >= elderly_age)
    return ScoredDetections(str(rec["patient_id"]), scores, elderly)


def format_detections(records: Sequence[Mapping]) -> str:
    return dumps_canonical({"format": DETECTIONS_FORMAT, "version": 1, "patients": list(records)})


def write_detections(path, records: Sequence[Mapping]) -> None:
    atomic_write_text(path, format_detections(records))


def load_detections(path, elderly_age: int = 65) -> list[ScoredDetections]:
    doc = read_json(path)
    records = doc["patients"] if isinstance(doc, Mapping) else doc
    return [record_to_detections(r, elderly_age) for r in records]


def refinement_report(
    results: Sequence[RefinementResult], thresholds: ThresholdConfig, mode: EvidenceMode
) -> dict:
    counts = {g.value: 0 for g in GRADE_ORDER}
    for r in results:
        counts[r.final_grade.value] += 1
    return {
        "thresholds": thresholds.to_dict(),
        "evidence_mode": EvidenceMode(mode).value,
        "grade_counts": counts,
        "patients": [r.to_dict() for r in results],
    }
