"""Regenerate data/reference_ratings.tsv from data/reference_means.tsv.

190 synthetic participants (10 per prompt) rate all 48 (target, lambda)
texts on seven dimensions. Values are on the 0.1 grid in [0, 7]; each cell's
values are drawn from a beta distribution matching the source mean/SD and then nudged one tenth at a
time until the cell sum equals 190 * mean exactly, so every cell mean
reproduces its two-decimal source value.
"""
from __future__ import annotations

import csv
import sys
from pathlib import Path

import numpy as np

from emosteer.corpus import EKMAN
from emosteer.harness.ratings import write_ratings
from emosteer.stats import DIMENSIONS, LAMBDA_GRID, RatingRecord

DATA = Path(__file__).resolve().parents[1] / "src" / "emosteer" / "data"
N_PROMPTS, PER_PROMPT, SEED = 19, 10, 20240917


def load_means(path: Path) -> dict[tuple[str, str, float], tuple[float, float]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {(r["target"], r["dimension"], float(r["lambda"])): (float(r["mean"]), float(r["sd"]))
                for r in csv.DictReader(fh, delimiter="\t")}


def cell_values(rng: np.random.Generator, mean: float, sd: float, n: int, person: np.ndarray) -> np.ndarray:
    # moment-matched beta on [0, 7]; ranks follow a latent that shares a
    # per-participant component, so raters differ consistently
    mu, var = mean / 7, (sd / 7) ** 2
    common = mu * (1 - mu) / var - 1
    draws = np.sort(7 * rng.beta(mu * common, (1 - mu) * common, size=n))
    latent = 0.5 * person + np.sqrt(0.75) * rng.standard_normal(n)
    values = np.empty(n)
    values[np.argsort(latent, kind="stable")] = draws
    tenths = np.clip(np.rint(values * 10), 0, 70).astype(int)
    target = int(round(mean * 10 * n))
    while (diff := target - int(tenths.sum())) != 0:
        step = 1 if diff > 0 else -1
        room = np.flatnonzero(tenths < 70) if step > 0 else np.flatnonzero(tenths > 0)
        pick = rng.choice(room, size=min(abs(diff), room.size), replace=False)
        tenths[pick] += step
    return tenths


def main(out: Path = DATA / "reference_ratings.tsv") -> None:
    rng = np.random.default_rng(SEED)
    means = load_means(DATA / "reference_means.tsv")
    n = N_PROMPTS * PER_PROMPT
    pids = [f"P{i + 1:03d}" for i in range(n)]
    prompts = [i // PER_PROMPT + 1 for i in range(n)]
    person = rng.standard_normal(n)
    values = {}
    for key in sorted(means):
        m, s = means[key]
        values[key] = cell_values(rng, m, s, n, person)
    records = []
    for i in range(n):
        for t in EKMAN:
            for lam in LAMBDA_GRID:
                v = {d: values[(t, d, lam)][i] / 10 for d in DIMENSIONS}
                comp = v.pop("comprehensibility")
                records.append(RatingRecord(pids[i], prompts[i], t, lam, v, comp))
    write_ratings(records, out)
    print(f"wrote {len(records)} records to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else DATA / "reference_ratings.tsv")
