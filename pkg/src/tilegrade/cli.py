"""Command-line front end.

Exit status: 0 on success, 2 on bad input or configuration, 1 on an
internal error. Output files are written atomically, so a failed command
leaves no partial artifact behind.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigInvalid, TileGradeError
from .experiment import (
    ExperimentConfig,
    format_sweep_tsv,
    load_config,
    parse_z_range,
    prepare,
    evaluate_prepared,
    sweep_prepared,
    check_sweep_values,
)
from .fileio import atomic_write_text, dumps_canonical
from .inference import query_marginal
from .learning import ELDERLY_AGE, LearningConfig, fit_cpds, ingest_cohort, write_cohort
from .network import Evidence, feature_nodes, load_network, load_structure, save_network
from .refinement import (
    GRADE_ORDER,
    EvidenceMode,
    ThresholdConfig,
    TileGrade,
    candidate_fractures,
    covariate_evidence,
    detections_to_record,
    load_detections,
    refine,
    refinement_report,
    tile_from_instabilities,
    write_detections,
)
from .simulator import default_profile, sample_cohort, simulate_cohort_detections

log = logging.getLogger("tilegrade")


class UsageError(Exception):
    """Bad flags or unusable paths; reported with exit status 2."""


def _input_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _output_file(path: str) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")
    return p


def _thresholds(args) -> ThresholdConfig:
    try:
        return ThresholdConfig(args.z_high, args.z_low, args.z_promote)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_threshold_flags(p):
    p.add_argument("--z-high", type=float, default=0.95, help="high-confidence cut (default 0.95)")
    p.add_argument("--z-low", type=float, default=0.5, help="low-confidence floor (default 0.5)")
    p.add_argument("--z-promote", type=float, default=None,
                   help="candidate probability needed for promotion (default: z-high)")
    p.add_argument("--mode", choices=[m.value for m in EvidenceMode],
                   default=EvidenceMode.PRESENT_ONLY.value, help="evidence mode for grading")


# --- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    fixture = Path(args.fixture)
    if not fixture.is_file():
        raise UsageError(f"fixture not found: {args.fixture}")
    out_cohort = _output_file(args.out_cohort)
    out_det = _output_file(args.out_detections)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    network = load_network(fixture)
    features = feature_nodes(network)
    cohort = sample_cohort(network, args.n, args.seed)
    detections = simulate_cohort_detections(cohort, default_profile(features), args.seed)
    write_cohort(out_cohort, [p.to_record() for p in cohort], features)
    write_detections(out_det, [
        detections_to_record(d, p.age_years) for d, p in zip(detections, cohort)
    ])
    n_det = sum(len(d.scores) for d in detections)
    grades = {g.value: 0 for g in GRADE_ORDER}
    for p in cohort:
        grades[tile_from_instabilities(p.r_unstable, p.t_unstable).value] += 1
    print(f"generated {len(cohort)} patients, {n_det} detections; "
          f"true grades A={grades['A']} B={grades['B']} C={grades['C']}")
    return 0


def cmd_learn(args) -> int:
    cohort_path = _input_file(args.cohort, "cohort")
    structure_path = _input_file(args.structure, "structure")
    out = _output_file(args.out)
    structure = load_structure(structure_path)
    data = ingest_cohort(cohort_path, structure, args.elderly_age)
    model = fit_cpds(structure, data, LearningConfig(args.alpha))
    save_network(model, out)
    print(f"fitted {len(structure.variables)} CPDs from {len(data)} patients (alpha={args.alpha:g})")
    return 0


def _parse_assignments(text: str) -> dict[str, str]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise UsageError(f"evidence item {item!r} must look like VAR=STATE")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_infer(args) -> int:
    model = load_network(_input_file(args.model, "model"))
    raw = _parse_assignments(args.evidence or "")
    resolved = {}
    for k, v in raw.items():
        resolved[k] = int(v) if v.isdigit() else v
    evidence = Evidence.from_labels(model, resolved)
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    table = query_marginal(model, evidence, targets)
    doc = {t: dict(zip(model.variable(t).states, map(float, table[t]))) for t in targets}
    for t in targets:
        cells = "  ".join(f"{s}={p:.6f}" for s, p in doc[t].items())
        print(f"{t}: {cells}")
    if args.out:
        atomic_write_text(_output_file(args.out), dumps_canonical({"evidence": raw, "marginals": doc}))
    return 0


def cmd_candidates(args) -> int:
    model = load_network(_input_file(args.model, "model"))
    fx_high = [f.strip() for f in (args.fx_high or "").split(",") if f.strip()]
    grades = [TileGrade(args.grade)] if args.grade else list(GRADE_ORDER)
    cov = covariate_evidence(model, args.elderly)
    for g in grades:
        print(f"grade {g}:")
        for fx, p in candidate_fractures(model, fx_high, g, cov):
            print(f"  {fx:<22} {p:.4f}")
    return 0


def cmd_refine(args) -> int:
    model_path = _input_file(args.model, "model")
    det_path = _input_file(args.detections, "detections")
    out = _output_file(args.out)
    thresholds = _thresholds(args)
    mode = EvidenceMode(args.mode)
    model = load_network(model_path)
    patients = load_detections(det_path, args.elderly_age)
    if args.explain and all(d.patient_id != args.explain for d in patients):
        raise UsageError(f"no patient {args.explain!r} in {args.detections}")
    results = [refine(model, d, thresholds, mode, batch=args.batch) for d in patients]
    report = refinement_report(results, thresholds, mode)
    atomic_write_text(out, dumps_canonical(report))

    if args.explain:
        r = next(r for r in results if r.patient_id == args.explain)
        print(f"patient {r.patient_id}: fx_high={sorted(r.fx_high_initial)} fx_low={sorted(r.fx_low_initial)}")
        print(f"  initial grade {r.initial_grade} (p_R={r.scores_before[0]:.4f}, p_T={r.scores_before[1]:.4f})")
        for grade, cands in r.candidates:
            print(f"  candidates under grade {grade}:")
            for fx, p in cands:
                flag = "  <- promoted" if any(q.feature == fx and q.grade == grade for q in r.promoted) else ""
                print(f"    {fx:<22} {p:.4f}{flag}")
        print(f"  final grade {r.final_grade} (p_R={r.scores_after[0]:.4f}, p_T={r.scores_after[1]:.4f})")

    counts = report["grade_counts"]
    n_promoted = sum(len(r.promoted) for r in results)
    print(f"z_high={thresholds.z_high} z_low={thresholds.z_low} z_promote={thresholds.z_promote}; "
          f"{len(results)} patients, {n_promoted} promotions; "
          f"final grades A={counts['A']} B={counts['B']} C={counts['C']}")
    return 0


def _load_experiment(args) -> ExperimentConfig:
    config = load_config(_input_file(args.config, "config"))
    if args.seed is not None:
        config = ExperimentConfig(**{**config.__dict__, "seed": args.seed})
    if not config.fixture_path.is_file():
        raise UsageError(f"fixture not found: {config.fixture_path}")
    return config


def cmd_evaluate(args) -> int:
    config = _load_experiment(args)
    out = _output_file(args.out)
    summary_out = _output_file(args.summary) if args.summary else None
    report = evaluate_prepared(prepare(config))
    atomic_write_text(out, report.to_json())
    if summary_out:
        atomic_write_text(summary_out, report.summary())
    print(report.summary(), end="")
    return 0


def cmd_sweep(args) -> int:
    config = _load_experiment(args)
    out = _output_file(args.out)
    z_values = check_sweep_values(parse_z_range(args.z), config.thresholds.z_high)
    rows = sweep_prepared(prepare(config), z_values)
    atomic_write_text(out, format_sweep_tsv(rows))
    print(f"{'z':>6} {'R':>8} {'R*':>8} {'GT_R':>8} {'T':>8} {'T*':>8} {'GT_T':>8}")
    for row in rows:
        print(f"{row['z']:>6.3f} {row['AUC_R']:>8.4f} {row['AUC_R_refined']:>8.4f} {row['AUC_R_GT']:>8.4f} "
              f"{row['AUC_T']:>8.4f} {row['AUC_T_refined']:>8.4f} {row['AUC_T_GT']:>8.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tilegrade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic cohort and detector output")
    p.add_argument("--fixture", required=True, help="generating network file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-cohort", required=True)
    p.add_argument("--out-detections", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("learn", help="fit CPDs to a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--structure", required=True, help="network file; its CPDs are ignored")
    p.add_argument("--alpha", type=float, default=1.0, help="Dirichlet pseudocount per cell (default 1)")
    p.add_argument("--elderly-age", type=int, default=ELDERLY_AGE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("infer", help="posterior marginals under evidence")
    p.add_argument("--model", required=True)
    p.add_argument("--evidence", default="", help="comma-separated VAR=STATE pairs")
    p.add_argument("--targets", default="R,T")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("candidates", help="likely co-occurring findings per hypothesised grade")
    p.add_argument("--model", required=True)
    p.add_argument("--fx-high", default="", help="comma-separated high-confidence findings")
    p.add_argument("--grade", choices=[g.value for g in GRADE_ORDER])
    p.add_argument("--elderly", type=int, choices=(0, 1))
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("refine", help="grade and refine every patient in a detections file")
    p.add_argument("--model", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    _add_threshold_flags(p)
    p.add_argument("--batch", action="store_true", help="apply promotions after all grades are queried")
    p.add_argument("--elderly-age", type=int, default=ELDERLY_AGE)
    p.add_argument("--explain", metavar="PATIENT", help="print the candidate trace for one patient")
    p.set_defaults(func=cmd_refine)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "cross-validated comparison of grading conditions"),
        ("sweep", cmd_sweep, "AUC as a function of the low-confidence floor"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", required=True)
        if name == "evaluate":
            p.add_argument("--summary", help="also write the plain-text table here")
        else:
            p.add_argument("--z", default="0.1:0.9:0.05", help="start:stop:step or comma list")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, TileGradeError, ConfigInvalid) as exc:
        print(f"tilegrade {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"tilegrade {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
