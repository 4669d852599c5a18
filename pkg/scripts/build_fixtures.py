"""Regenerate the shipped network fixtures and their manifest.

    python scripts/build_fixtures.py

Writes ``pelvic.json`` (generating network for synthetic cohorts),
``desk.json`` (three-finding network used for hand-checkable traces) and
``MANIFEST.json`` (checksums plus constants recomputed from the fixtures).
"""

import hashlib
from pathlib import Path

from tilegrade.experiment import load_config, run_experiment
from tilegrade.fileio import atomic_write_text, dumps_canonical
from tilegrade.network import (
    Cpd,
    CANONICAL_FEATURES,
    build_network,
    default_pelvic_structure,
    save_network,
)

DATA = Path(__file__).resolve().parents[1] / "src" / "tilegrade" / "data"


def binary(p):
    return [1.0 - p, p]


# p(present | R, T) for rows (stable, stable), (stable, unstable),
# (unstable, stable), (unstable, unstable)
PELVIC_FEATURES = {
    # rotational marker
    "PSD": [0.05, 0.1, 0.98, 0.99],
    # translational marker, the detector's weakest class
    "divergent_SI": [0.03, 0.98, 0.3, 0.99],
    "parallel_SI": [0.0, 0.0, 0.012, 0.012],
    "sacral_fx": [0.0, 0.012, 0.0, 0.012],
    "diastatic_sacral_fx": [0.0, 0.012, 0.0, 0.012],
    "ISp": [0.0, 0.0, 0.01, 0.01],
    # common in every grade, near-universal when globally unstable
    "ring_fx": [0.5, 0.7, 0.7, 0.985],
}


def pelvic_network():
    structure = default_pelvic_structure(list(CANONICAL_FEATURES), include_age=True)
    cpds = [
        Cpd("Age", (), [binary(0.3)]),
        Cpd("R", ("Age",), [binary(0.5), binary(0.65)]),
        Cpd("T", ("Age",), [binary(0.25), binary(0.4)]),
    ]
    for fx, rows in PELVIC_FEATURES.items():
        cpds.append(Cpd(fx, ("R", "T"), [binary(p) for p in rows]))
    return build_network(structure, cpds)


def desk_network():
    structure = default_pelvic_structure(["PSD", "divergent_SI", "ring_fx"], include_age=False)
    rows = {
        "PSD": [0.05, 0.1, 0.9, 0.9],
        "divergent_SI": [0.02, 0.8, 0.3, 0.97],
        "ring_fx": [0.3, 0.6, 0.6, 0.9],
    }
    cpds = [Cpd("R", (), [binary(0.5)]), Cpd("T", (), [binary(0.3)])]
    cpds += [Cpd(fx, ("R", "T"), [binary(p) for p in r]) for fx, r in rows.items()]
    return build_network(structure, cpds)


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main():
    save_network(pelvic_network(), DATA / "pelvic.json")
    save_network(desk_network(), DATA / "desk.json")
    report = run_experiment(load_config(DATA / "default_experiment.toml"))
    manifest = {
        "fixtures": {
            name: {"sha256": sha256(DATA / name)}
            for name in ("pelvic.json", "desk.json", "default_experiment.toml")
        },
        "default_experiment": {
            cond: {inst: report.average[cond][inst]["auc"] for inst in ("R", "T")}
            for cond in report.average
        },
    }
    atomic_write_text(DATA / "MANIFEST.json", dumps_canonical(manifest))
    print(report.summary())


if __name__ == "__main__":
    main()
