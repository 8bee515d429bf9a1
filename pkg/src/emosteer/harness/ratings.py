"""Human rating files, per-cell summaries and human/model alignment."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..corpus import EKMAN
from ..stats import (
    COMPREHENSIBILITY,
    DIMENSIONS,
    LAMBDA_GRID,
    CorrelationResult,
    RatingRecord,
    UndefinedCorrelationError,
    check_rating,
    grid_lambda,
    pearson,
)

RATINGS_HEADER = ("participant_id", "prompt_id", "target_emotion", "lambda") + DIMENSIONS
N_PROMPTS = 19


class RatingsSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class RatingsFile:
    records: list[RatingRecord]
    errors: list[RowError] = field(default_factory=list)


def _parse_row(row: Mapping[str, str]) -> RatingRecord:
    pid = row["participant_id"].strip()
    if not pid:
        raise ValueError("participant_id is empty")
    prompt = int(row["prompt_id"])
    if not 1 <= prompt <= N_PROMPTS:
        raise ValueError(f"prompt_id {prompt} outside 1..{N_PROMPTS}")
    target = row["target_emotion"].strip()
    if target not in EKMAN:
        raise ValueError(f"unknown target emotion {target!r}")
    lam = grid_lambda(float(row["lambda"]))
    values: dict[str, float | None] = {}
    for dim in DIMENSIONS:
        raw = row[dim].strip()
        if raw == "":
            values[dim] = None
            continue
        v = float(raw)
        check_rating(v, dim)
        values[dim] = v
    comp = values.pop(COMPREHENSIBILITY)
    return RatingRecord(pid, prompt, target, lam, values, comp)


def ingest_ratings(path: str | Path) -> RatingsFile:
    """Load and validate a ratings file.

    A wrong or missing header is fatal; invalid rows are skipped and reported
    with their line numbers.
    """
    records: list[RatingRecord] = []
    errors: list[RowError] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise RatingsSchemaError(f"{path}: empty file, expected header {RATINGS_HEADER}")
        if tuple(h.strip() for h in header) != RATINGS_HEADER:
            raise RatingsSchemaError(f"{path}: header {header} does not match {RATINGS_HEADER}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(RATINGS_HEADER):
                errors.append(RowError(reader.line_num, f"expected {len(RATINGS_HEADER)} fields, got {len(row)}"))
                continue
            try:
                records.append(_parse_row(dict(zip(RATINGS_HEADER, row))))
            except ValueError as exc:
                errors.append(RowError(reader.line_num, str(exc)))
    return RatingsFile(records, errors)


def write_ratings(records: Iterable[RatingRecord], path: str | Path) -> None:
    def fmt(v: float | None) -> str:
        return "" if v is None else f"{v:.1f}"

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(RATINGS_HEADER)
        for r in records:
            w.writerow([r.participant_id, r.prompt_id, r.target_emotion, f"{r.lam:.2f}"]
                       + [fmt(r.value(d)) for d in DIMENSIONS])


# --------------------------------------------------------------------------
# summaries

@dataclass(frozen=True)
class CellStat:
    mean: float
    sd: float
    n: int


@dataclass(frozen=True)
class SummaryTable:
    """cells[(target, lambda)][dimension] -> CellStat."""

    cells: dict[tuple[str, float], dict[str, CellStat]]
    dimensions: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def get(self, target: str, lam: float, dimension: str) -> CellStat:
        return self.cells[(target, lam)][dimension]

    def targets(self) -> list[str]:
        seen = {t for t, _ in self.cells}
        return [t for t in EKMAN if t in seen] + sorted(seen - set(EKMAN))

    def lambdas(self) -> list[float]:
        return sorted({lam for _, lam in self.cells})

    def series(self, target: str, dimension: str) -> tuple[list[float], list[float], list[float]]:
        """(lambdas, means, sds) for one curve; cells without data are skipped."""
        lams, means, sds = [], [], []
        for lam in self.lambdas():
            cell = self.cells.get((target, lam), {}).get(dimension)
            if cell is not None:
                lams.append(lam)
                means.append(cell.mean)
                sds.append(cell.sd)
        return lams, means, sds


def _observations(item) -> tuple[str, float, dict[str, float]]:
    if isinstance(item, RatingRecord):
        vals = {d: item.value(d) for d in DIMENSIONS}
        return item.target_emotion, item.lam, {d: v for d, v in vals.items() if v is not None}
    # sweep ResultRow: model emotion scores plus normalised comprehensibility
    vals = dict(item.scores)
    vals[COMPREHENSIBILITY] = item.comprehensibility_normalized
    return item.target, item.lam, vals


# Ratings sit on a 0.1 grid; rounding the mean to 12 decimals removes binary
# representation noise so reported two-decimal means compare exactly.
_MEAN_DECIMALS = 12


def summarize(items: Sequence) -> SummaryTable:
    """Mean and sample SD per (target, lambda, dimension) over records or result rows."""
    if not items:
        raise ValueError("summarize needs at least one record")
    groups: dict[tuple[str, float], dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    dims: list[str] = []
    for item in items:
        target, lam, vals = _observations(item)
        for d, v in vals.items():
            groups[(target, lam)][d].append(v)
            if d not in dims:
                dims.append(d)
    ordered = [d for d in DIMENSIONS if d in dims] + [d for d in dims if d not in DIMENSIONS]
    cells: dict[tuple[str, float], dict[str, CellStat]] = {}
    flags = []
    for key in sorted(groups, key=lambda k: (EKMAN.index(k[0]) if k[0] in EKMAN else 99, k[0], k[1])):
        cells[key] = {}
        for d in ordered:
            vals = sorted(groups[key].get(d, []))  # sorted so the result ignores input order
            if not vals:
                flags.append(f"empty:{key[0]}:{key[1]:.2f}:{d}")
                continue
            n = len(vals)
            mean = math.fsum(vals) / n
            sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
            cells[key][d] = CellStat(round(mean, _MEAN_DECIMALS), sd, n)
    return SummaryTable(cells, tuple(ordered), tuple(flags))


def format_descriptive_table(table: SummaryTable, decimals: int = 2) -> str:
    """Plain-text table: one block per target, rows are dimensions, columns lambdas, M (SD)."""
    lines = []
    lams = table.lambdas()
    for target in table.targets():
        lines.append(f"Target emotion: {target}")
        lines.append("\t".join(["dimension"] + [f"{lam:.2f}" for lam in lams]))
        for d in table.dimensions:
            cells = []
            for lam in lams:
                c = table.cells.get((target, lam), {}).get(d)
                cells.append("" if c is None else f"{c.mean:.{decimals}f} ({c.sd:.{decimals}f})")
            lines.append("\t".join([d] + cells))
        lines.append("")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# human / model alignment

@dataclass(frozen=True)
class AlignmentResult:
    per_emotion: dict[str, CorrelationResult]
    errors: dict[str, str]
    mean_r: float


def align_human_model(human: Mapping[str, Sequence[float]], model: Mapping[str, Sequence[float]]) -> AlignmentResult:
    """Pearson r per emotion between human and model means over the strength grid.

    Emotions whose correlation is undefined are reported in ``errors`` and left
    out of the unweighted mean.
    """
    per: dict[str, CorrelationResult] = {}
    errors: dict[str, str] = {}
    for emotion in human:
        if emotion not in model:
            raise KeyError(f"model series missing for {emotion!r}")
        if len(human[emotion]) != len(LAMBDA_GRID) or len(model[emotion]) != len(LAMBDA_GRID):
            raise ValueError(f"{emotion}: expected {len(LAMBDA_GRID)} points per series")
        try:
            per[emotion] = pearson(human[emotion], model[emotion])
        except UndefinedCorrelationError as exc:
            errors[emotion] = str(exc)
    mean_r = math.fsum(c.r for c in per.values()) / len(per) if per else math.nan
    return AlignmentResult(per, errors, mean_r)


def target_series(table: SummaryTable, emotions: Sequence[str] = EKMAN) -> dict[str, list[float]]:
    """Target-on-target means per emotion across the strength grid."""
    return {e: table.series(e, e)[1] for e in emotions}
