"""Rating statistics: Pearson, ICC(2,1)/ICC(2,k), two-way repeated-measures ANOVA
with Greenhouse-Geisser correction, Mauchly's sphericity test, mean imputation
and the prescreening dominance rule.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .corpus import EKMAN
from .special import chi2_sf, f_sf, t_sf_two_sided

LAMBDA_GRID = (0.00, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35)
RATING_MIN, RATING_MAX = 0.0, 7.0
COMPREHENSIBILITY = "comprehensibility"
DIMENSIONS = EKMAN + (COMPREHENSIBILITY,)
PRESCREEN_MARGIN = 0.5
PRESCREEN_REQUIRED = 3
PRESCREEN_TEXTS = 5


class UndefinedCorrelationError(ValueError):
    pass


class DegenerateVarianceError(ValueError):
    pass


class IncompleteDesignError(ValueError):
    pass


class UnimputableCellError(ValueError):
    def __init__(self, cell: tuple):
        super().__init__(f"cell {cell} has no observed values to impute from")
        self.cell = cell


# --------------------------------------------------------------------------
# Pearson

@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    p_value: float


def pearson(xs: Sequence[float], ys: Sequence[float]) -> CorrelationResult:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D series of equal length")
    n = x.size
    if n < 3:
        raise ValueError("pearson needs at least 3 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: a series has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = t_sf_two_sided(t, n - 2)
    return CorrelationResult(r, n, p)


# --------------------------------------------------------------------------
# ICC

def koo_li_band(value: float) -> str:
    if value > 0.90:
        return "excellent"
    if value >= 0.75:
        return "good"
    if value >= 0.5:
        return "moderate"
    return "poor"


@dataclass(frozen=True)
class IccResult:
    icc_2_1: float
    icc_2_k: float
    k: int
    n: int
    ms_rows: float
    ms_cols: float
    ms_error: float

    @property
    def band_2_1(self) -> str:
        return koo_li_band(self.icc_2_1)

    @property
    def band_2_k(self) -> str:
        return koo_li_band(self.icc_2_k)


def icc(matrix: np.ndarray | Sequence[Sequence[float]]) -> IccResult:
    """Two-way random-effects, absolute-agreement ICC; rows are targets, columns raters."""
    y = np.asarray(matrix, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] < 2:
        raise ValueError("ICC needs a matrix with at least 2 rows and 2 columns")
    if not np.all(np.isfinite(y)):
        raise ValueError("ICC matrix has missing or non-finite cells; impute first")
    n, k = y.shape
    grand = y.mean()
    row_m = y.mean(axis=1)
    col_m = y.mean(axis=0)
    ss_rows = k * float(((row_m - grand) ** 2).sum())
    ss_cols = n * float(((col_m - grand) ** 2).sum())
    resid = y - row_m[:, None] - col_m[None, :] + grand
    ss_err = float((resid**2).sum())
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    den_1 = msr + (k - 1) * mse + k * (msc - mse) / n
    den_k = msr + (msc - mse) / n
    if den_1 == 0.0 or den_k == 0.0:
        raise DegenerateVarianceError("ICC undefined: mean squares are degenerate")
    return IccResult((msr - mse) / den_1, (msr - mse) / den_k, k, n, msr, msc, mse)


# --------------------------------------------------------------------------
# sphericity

def orthonormal_contrasts(k: int) -> np.ndarray:
    """k x (k-1) normalised Helmert contrasts: orthonormal columns orthogonal to 1."""
    if k < 2:
        raise ValueError("need at least 2 levels")
    c = np.zeros((k, k - 1))
    for j in range(1, k):
        c[:j, j - 1] = 1.0
        c[j, j - 1] = -float(j)
        c[:, j - 1] /= math.sqrt(j * (j + 1))
    return c


def _check_cov(cov: np.ndarray) -> np.ndarray:
    s = np.asarray(cov, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if s.shape[0] < 2:
        raise ValueError("covariance must be at least 2 x 2")
    if not np.allclose(s, s.T, rtol=1e-10, atol=1e-12 * max(1.0, float(np.abs(s).max()))):
        raise ValueError("covariance must be symmetric")
    return s


def _epsilon_from_transformed(s: np.ndarray) -> float:
    p = s.shape[0]
    tr = float(np.trace(s))
    tr2 = float(np.sum(s * s.T))
    if tr2 == 0.0:
        return 1.0
    eps = tr * tr / (p * tr2)
    return min(1.0, max(1.0 / p, eps))


def gg_epsilon(within_covariance: np.ndarray) -> float:
    """Greenhouse-Geisser epsilon for a k x k covariance of repeated measures."""
    s = _check_cov(within_covariance)
    c = orthonormal_contrasts(s.shape[0])
    return _epsilon_from_transformed(c.T @ s @ c)


@dataclass(frozen=True)
class MauchlyResult:
    w: float
    chi_sq: float
    df: int
    p_value: float
    singular: bool = False


def _mauchly_from_transformed(s: np.ndarray, n_subjects: int) -> MauchlyResult:
    p = s.shape[0]
    if p == 1:
        return MauchlyResult(1.0, 0.0, 0, 1.0)
    df = p * (p + 1) // 2 - 1
    tr = float(np.trace(s))
    sign, logdet = np.linalg.slogdet(s)
    if tr <= 0 or sign <= 0:
        return MauchlyResult(0.0, math.inf, df, 0.0, singular=True)
    log_w = logdet - p * math.log(tr / p)
    w = min(1.0, math.exp(log_w))
    factor = (n_subjects - 1) - (2 * p * p + p + 2) / (6 * p)
    chi = max(0.0, -factor * min(log_w, 0.0))
    return MauchlyResult(w, chi, df, chi2_sf(chi, df))


def mauchly_w(within_covariance: np.ndarray, n_subjects: int) -> MauchlyResult:
    """Mauchly's W with its chi-square approximation; singular input gives W=0, flagged."""
    s = _check_cov(within_covariance)
    k = s.shape[0]
    if n_subjects <= k:
        raise ValueError(f"need more subjects ({n_subjects}) than levels ({k})")
    c = orthonormal_contrasts(k)
    return _mauchly_from_transformed(c.T @ s @ c, n_subjects)


# --------------------------------------------------------------------------
# two-way repeated-measures ANOVA

@dataclass(frozen=True)
class EffectRow:
    name: str
    ss: float
    ss_error: float
    df1: float
    df2: float
    f: float
    p: float
    epsilon: float
    df1_gg: float
    df2_gg: float
    p_gg: float
    partial_eta_sq: float
    mauchly: MauchlyResult


@dataclass(frozen=True)
class AnovaTable:
    effects: dict[str, EffectRow]
    ss_subjects: float
    ss_total: float
    n_subjects: int
    levels: tuple[int, int]

    def __getitem__(self, name: str) -> EffectRow:
        return self.effects[name]


def _effect(name, ss, ss_err, df1, df2, transformed_cov, n) -> EffectRow:
    if ss_err == 0.0:
        f = 0.0 if ss == 0.0 else math.inf
        eta = 0.0 if ss == 0.0 else 1.0
    else:
        f = (ss / df1) / (ss_err / df2)
        eta = ss / (ss + ss_err)
    eps = _epsilon_from_transformed(transformed_cov)
    p = f_sf(f, df1, df2)
    p_gg = f_sf(f, df1 * eps, df2 * eps)
    if transformed_cov.shape[0] < n:
        mau = _mauchly_from_transformed(transformed_cov, n)
    else:
        mau = MauchlyResult(0.0, math.inf, transformed_cov.shape[0] * (transformed_cov.shape[0] + 1) // 2 - 1,
                            0.0, singular=True)
    return EffectRow(name, ss, ss_err, df1, df2, f, p, eps, df1 * eps, df2 * eps, p_gg, eta, mau)


def rm_anova_two_way(data: np.ndarray, names: tuple[str, str] = ("E", "lambda")) -> AnovaTable:
    """Fully crossed two-factor within-subject ANOVA.

    ``data`` has shape (subjects, levels_a, levels_b), one cell mean per entry.
    """
    y = np.asarray(data, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError("data must have shape (subjects, levels_a, levels_b)")
    if not np.all(np.isfinite(y)):
        raise IncompleteDesignError("design has missing cells; run impute_means first")
    n, a, b = y.shape
    if n < 2 or a < 2 or b < 2:
        raise ValueError("need at least 2 subjects and 2 levels per factor")
    m = y.mean()
    s_m = y.mean(axis=(1, 2))
    a_m = y.mean(axis=(0, 2))
    b_m = y.mean(axis=(0, 1))
    sa = y.mean(axis=2)  # (n, a)
    sb = y.mean(axis=1)  # (n, b)
    ab = y.mean(axis=0)  # (a, b)

    ss_total = float(((y - m) ** 2).sum())
    ss_s = a * b * float(((s_m - m) ** 2).sum())
    ss_a = n * b * float(((a_m - m) ** 2).sum())
    ss_as = b * float(((sa - s_m[:, None] - a_m[None, :] + m) ** 2).sum())
    ss_b = n * a * float(((b_m - m) ** 2).sum())
    ss_bs = a * float(((sb - s_m[:, None] - b_m[None, :] + m) ** 2).sum())
    ss_ab = n * float(((ab - a_m[:, None] - b_m[None, :] + m) ** 2).sum())
    resid = (y - sa[:, :, None] - sb[:, None, :] - ab[None, :, :]
             + s_m[:, None, None] + a_m[None, :, None] + b_m[None, None, :] - m)
    ss_abs = float((resid**2).sum())

    ca, cb = orthonormal_contrasts(a), orthonormal_contrasts(b)
    cov_a = ca.T @ np.cov(sa, rowvar=False) @ ca
    cov_b = cb.T @ np.cov(sb, rowvar=False) @ cb
    cab = np.kron(ca, cb)
    cov_ab = cab.T @ np.cov(y.reshape(n, a * b), rowvar=False) @ cab

    name_a, name_b = names
    effects = {
        name_a: _effect(name_a, ss_a, ss_as, a - 1, (a - 1) * (n - 1), cov_a, n),
        name_b: _effect(name_b, ss_b, ss_bs, b - 1, (b - 1) * (n - 1), cov_b, n),
        f"{name_a}x{name_b}": _effect(f"{name_a}x{name_b}", ss_ab, ss_abs, (a - 1) * (b - 1),
                                      (a - 1) * (b - 1) * (n - 1), cov_ab, n),
    }
    return AnovaTable(effects, ss_s, ss_total, n, (a, b))


# --------------------------------------------------------------------------
# rating records

@dataclass(frozen=True)
class RatingRecord:
    participant_id: str
    prompt_id: int
    target_emotion: str
    lam: float
    intensities: Mapping[str, float | None]
    comprehensibility: float | None

    def value(self, dimension: str) -> float | None:
        if dimension == COMPREHENSIBILITY:
            return self.comprehensibility
        return self.intensities[dimension]

    def missing(self) -> tuple[str, ...]:
        return tuple(d for d in DIMENSIONS if self.value(d) is None)


def grid_lambda(value: float) -> float:
    """Snap ``value`` onto the strength grid or raise."""
    for g in LAMBDA_GRID:
        if abs(value - g) < 1e-9:
            return g
    raise ValueError(f"lambda {value} is not on the grid {LAMBDA_GRID}")


def check_rating(value: float, name: str) -> None:
    if not math.isfinite(value) or not RATING_MIN <= value <= RATING_MAX:
        raise ValueError(f"{name}={value} outside [{RATING_MIN}, {RATING_MAX}]")
    if abs(value * 10 - round(value * 10)) > 1e-6:
        raise ValueError(f"{name}={value} is not on the 0.1 grid")


@dataclass(frozen=True)
class ImputationReport:
    records: list[RatingRecord]
    replacements: int
    total_values: int
    cells: dict[tuple, int] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.replacements / self.total_values if self.total_values else 0.0


def impute_means(records: Sequence[RatingRecord]) -> ImputationReport:
    """Replace each missing value by the mean of its (target, lambda, dimension) cell."""
    observed: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        for d in DIMENSIONS:
            v = r.value(d)
            if v is not None:
                observed[(r.target_emotion, r.lam, d)].append(v)
    means: dict[tuple, float] = {}
    replaced: dict[tuple, int] = defaultdict(int)
    out: list[RatingRecord] = []
    for r in records:
        gaps = r.missing()
        if not gaps:
            out.append(r)
            continue
        fills = {}
        for d in gaps:
            cell = (r.target_emotion, r.lam, d)
            if not observed.get(cell):
                raise UnimputableCellError(cell)
            if cell not in means:
                means[cell] = math.fsum(observed[cell]) / len(observed[cell])
            fills[d] = means[cell]
            replaced[cell] += 1
        intens = {e: (fills[e] if e in fills else v) for e, v in r.intensities.items()}
        comp = fills.get(COMPREHENSIBILITY, r.comprehensibility)
        out.append(replace(r, intensities=intens, comprehensibility=comp))
    total = len(records) * len(DIMENSIONS)
    return ImputationReport(out, sum(replaced.values()), total, dict(replaced))


def design_array(records: Sequence[RatingRecord], dimension: str,
                 targets: Sequence[str] = EKMAN, grid: Sequence[float] = LAMBDA_GRID) -> tuple[list[str], np.ndarray]:
    """Per-participant (targets x grid) cell means of ``dimension``; missing cells are NaN."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, np.ndarray] = {}
    t_index = {t: i for i, t in enumerate(targets)}
    g_index = {g: j for j, g in enumerate(grid)}
    for r in records:
        v = r.value(dimension)
        if v is None or r.target_emotion not in t_index:
            continue
        key = r.participant_id
        if key not in sums:
            sums[key] = np.zeros((len(targets), len(grid)))
            counts[key] = np.zeros((len(targets), len(grid)))
        i, j = t_index[r.target_emotion], g_index[grid_lambda(r.lam)]
        sums[key][i, j] += v
        counts[key][i, j] += 1
    ids = sorted(sums)
    with np.errstate(invalid="ignore", divide="ignore"):
        arr = np.stack([sums[k] / counts[k] for k in ids]) if ids else np.empty((0, len(targets), len(grid)))
    return ids, arr


def anova_for_dimension(records: Sequence[RatingRecord], dimension: str) -> AnovaTable:
    ids, arr = design_array(records, dimension)
    if not np.all(np.isfinite(arr)):
        raise IncompleteDesignError(f"{dimension}: some participants lack cells; run impute_means first")
    return rm_anova_two_way(arr)


def icc_by_block(records: Sequence[RatingRecord], emotion: str) -> tuple[IccResult, list[IccResult]]:
    """ICC per prompt for texts steered towards ``emotion``, rated on that emotion.

    Within a prompt block, rows are the steering strengths and columns the
    raters of that prompt. Returns the block average and the per-block results.
    """
    blocks: dict[int, dict[str, dict[float, float]]] = defaultdict(lambda: defaultdict(dict))
    for r in records:
        if r.target_emotion != emotion:
            continue
        v = r.value(emotion)
        if v is not None:
            blocks[r.prompt_id][r.participant_id][grid_lambda(r.lam)] = v
    results = []
    for prompt_id in sorted(blocks):
        raters = sorted(blocks[prompt_id])
        grid = sorted({g for rr in raters for g in blocks[prompt_id][rr]})
        mat = np.array([[blocks[prompt_id][rr].get(g, np.nan) for rr in raters] for g in grid])
        results.append(icc(mat))
    if not results:
        raise ValueError(f"no ratings for target {emotion!r}")
    mean = IccResult(
        float(np.mean([x.icc_2_1 for x in results])),
        float(np.mean([x.icc_2_k for x in results])),
        results[0].k, results[0].n,
        float(np.mean([x.ms_rows for x in results])),
        float(np.mean([x.ms_cols for x in results])),
        float(np.mean([x.ms_error for x in results])),
    )
    return mean, results


# --------------------------------------------------------------------------
# prescreening

def prescreen_pass(texts: Sequence[tuple[Mapping[str, float], str]]) -> tuple[bool, int]:
    """A text is judged correctly when the true label is within 0.5 of the top rating.

    Passing requires at least three of the five texts.
    """
    if len(texts) != PRESCREEN_TEXTS:
        raise ValueError(f"prescreening uses exactly {PRESCREEN_TEXTS} texts, got {len(texts)}")
    correct = 0
    for ratings, label in texts:
        if set(ratings) != set(EKMAN):
            raise ValueError(f"ratings must cover exactly {EKMAN}")
        for e, v in ratings.items():
            if not RATING_MIN <= v <= RATING_MAX:
                raise ValueError(f"rating {e}={v} outside [0, 7]")
        top = max(ratings.values())
        # ratings live on a 0.1 grid; the tolerance keeps max-0.5 inclusive
        if ratings[label] >= top - PRESCREEN_MARGIN - 1e-9:
            correct += 1
    return correct >= PRESCREEN_REQUIRED, correct
