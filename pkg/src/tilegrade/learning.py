"""CPD fitting by Bayesian parameter estimation, and cohort file I/O.

Every CPD cell gets the same Dirichlet pseudocount ``alpha`` and the fitted
entry is the posterior mean ``(N_jk + alpha) / (N_j + alpha * r)``.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRow,
    EmptyDataset,
    MissingColumn,
    ParseError,
    SchemaMismatch,
    UnknownStateLabel,
)
from .fileio import atomic_write_text
from .network import AGE, BayesianNetwork, Cpd, NetworkStructure, build_network

ELDERLY_AGE = 65


@dataclass(frozen=True)
class LearningConfig:
    pseudocount: float = 1.0

    def __post_init__(self):
        if not (self.pseudocount >= 0 and math.isfinite(self.pseudocount)):
            raise ValueError("pseudocount must be a finite non-negative number")


@dataclass(frozen=True)
class Dataset:
    """Complete-data table of state indices, one row per patient."""

    columns: tuple[str, ...]
    rows: np.ndarray
    patient_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.columns))
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise SchemaMismatch(
                f"rows have shape {rows.shape}, expected (n, {len(self.columns)})"
            )
        if len(set(self.columns)) != len(self.columns):
            raise SchemaMismatch("duplicate dataset columns")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "patient_ids", tuple(self.patient_ids))

    def __len__(self):
        return self.rows.shape[0]

    def column(self, vid: str) -> np.ndarray:
        return self.rows[:, self.columns.index(vid)]

    def subset(self, indices: Sequence[int]) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        ids = tuple(self.patient_ids[i] for i in idx) if self.patient_ids else ()
        return Dataset(self.columns, self.rows[idx], ids)


def fit_cpds(
    structure: NetworkStructure, data: Dataset, config: LearningConfig | None = None
) -> BayesianNetwork:
    config = config or LearningConfig()
    missing = [v for v in structure.ids if v not in data.columns]
    if missing:
        raise SchemaMismatch(f"dataset lacks columns for {missing}")
    if len(data) == 0:
        raise EmptyDataset("cannot fit CPDs on a dataset with no rows")
    alpha = float(config.pseudocount)

    cpds = []
    for var in structure.variables:
        parents = structure.parents[var.id]
        cards = [structure.cardinality(p) for p in parents] + [var.cardinality]
        cols = [data.column(p) for p in parents] + [data.column(var.id)]
        for vid, col, card in zip((*parents, var.id), cols, cards):
            if col.size and (col.min() < 0 or col.max() >= card):
                raise SchemaMismatch(f"column {vid!r} has state indices outside [0, {card})")
        flat = np.ravel_multi_index(cols, cards)
        counts = np.bincount(flat, minlength=math.prod(cards)).astype(np.float64)
        counts = counts.reshape(-1, var.cardinality)
        totals = counts.sum(axis=1, keepdims=True)
        denom = totals + alpha * var.cardinality
        if np.any(denom == 0):
            j = int(np.flatnonzero(denom[:, 0] == 0)[0])
            raise DegenerateRow(
                f"no rows for parent configuration {j} of {var.id!r} and pseudocount is 0"
            )
        table = (counts + alpha) / denom
        cpds.append(Cpd(var.id, parents, table))
    return build_network(structure, cpds)


# --- cohort file ------------------------------------------------------------

PATIENT_ID = "patient_id"
AGE_COLUMN = "age"


def _resolve_header(header: Sequence[str], structure: NetworkStructure) -> dict[str, int]:
    """Map each non-age variable id to its column position (by id or name)."""
    position = {}
    lowered = {h.strip(): i for i, h in enumerate(header)}
    for var in structure.variables:
        if var.id == AGE:
            continue
        for key in (var.id, var.name):
            if key in lowered:
                position[var.id] = lowered[key]
                break
        else:
            raise MissingColumn(f"no column for variable {var.id!r}", line=1)
    return position


def _parse_state(cell: str, var, line: int, column: str) -> int:
    text = cell.strip()
    if text == "":
        raise ParseError("empty cell", line=line, column=column)
    if text in var.states:
        return var.states.index(text)
    try:
        k = int(text)
    except ValueError:
        raise UnknownStateLabel(f"{text!r} is not a state of {var.id!r}", line=line, column=column) from None
    if 0 <= k < var.cardinality:
        return k
    raise UnknownStateLabel(f"{text!r} is not a state of {var.id!r}", line=line, column=column)


def parse_cohort(text: str, structure: NetworkStructure, elderly_age: int = ELDERLY_AGE) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty cohort file (no header)", line=1) from None
    header = [h.strip() for h in header]
    position = _resolve_header(header, structure)
    needs_age = AGE in structure.ids
    if needs_age and AGE_COLUMN not in header:
        raise MissingColumn("no 'age' column", line=1)
    age_pos = header.index(AGE_COLUMN) if needs_age else None
    id_pos = header.index(PATIENT_ID) if PATIENT_ID in header else None

    rows, ids = [], []
    for lineno, record in enumerate(reader, start=2):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(record)}", line=lineno
            )
        row = []
        for var in structure.variables:
            if var.id == AGE:
                cell = record[age_pos].strip()
                try:
                    years = int(cell)
                except ValueError:
                    raise ParseError(f"age {cell!r} is not an integer", line=lineno, column=AGE_COLUMN) from None
                row.append(1 if years >= elderly_age else 0)
            else:
                col = header[position[var.id]]
                row.append(_parse_state(record[position[var.id]], var, lineno, col))
        rows.append(row)
        ids.append(record[id_pos].strip() if id_pos is not None else str(lineno - 2))
    return Dataset(structure.ids, np.array(rows, dtype=np.int64).reshape(len(rows), len(structure.ids)), tuple(ids))


def ingest_cohort(path, structure: NetworkStructure | BayesianNetwork, elderly_age: int = ELDERLY_AGE) -> Dataset:
    """Read a cohort CSV and resolve its cells to state indices of ``structure``.

    The integer ``age`` column is binned to the elderly flag at ``elderly_age``.
    """
    if isinstance(structure, BayesianNetwork):
        structure = structure.structure
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_cohort(text, structure, elderly_age)


def format_cohort(records: Iterable[Mapping], feature_ids: Sequence[str]) -> str:
    """Render cohort records (patient_id, age, R, T, features) as CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([PATIENT_ID, AGE_COLUMN, "R", "T", *feature_ids])
    for rec in records:
        writer.writerow([
            rec["patient_id"], int(rec["age"]), int(rec["R"]), int(rec["T"]),
            *(int(rec["features"][f]) for f in feature_ids),
        ])
    return buf.getvalue()


def write_cohort(path, records: Iterable[Mapping], feature_ids: Sequence[str]) -> None:
    atomic_write_text(path, format_cohort(records, feature_ids))
