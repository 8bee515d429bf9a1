"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal even when output capture is on.
"""
import time

import numpy as np
import pytest
from scipy import stats as sps

from emosteer.corpus import EKMAN, fixture_path
from emosteer.evaluation import lexical_density, normalize_comprehensibility, shannon_entropy
from emosteer.harness import ingest_ratings, summarize
from emosteer.harness.sweep import SweepConfig, prompt_seed
from emosteer.stats import gg_epsilon, icc, mauchly_w, pearson, prescreen_pass, rm_anova_two_way
from emosteer.steering import build_all_targets, encode_samples, steer_generate
from emosteer.synthetic import make_setup, target_score_curve
from emosteer.transformer import ByteTokenizer, DecodeParams, forward, generate

from oracles import (
    anova_oracle,
    compound_symmetric,
    difference_of_means,
    gg_oracle,
    icc_oracle,
    mauchly_oracle,
    pearson_oracle,
    random_covariance,
)

GRID = (0.00, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35)


@pytest.fixture
def verdict(capsys):
    """Call with (number, passed, detail); prints the line, then asserts."""
    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


def test_criterion_01_lambda_zero_identity(default_model, default_vectors, verdict):
    cfg = SweepConfig()
    tok = ByteTokenizer()
    start = time.perf_counter()
    mismatches = 0
    for pid, prompt in enumerate(cfg.prompts, start=1):
        decode = DecodeParams(seed=prompt_seed(cfg.seed, pid))
        plain = generate(default_model, tok.encode(prompt), None, decode).tokens
        for target in EKMAN:
            steered = steer_generate(default_model, prompt, default_vectors[target], 0.0, decode=decode)
            mismatches += steered.tokens != plain
    elapsed = time.perf_counter() - start
    verdict(1, mismatches == 0 and elapsed < 30,
            f"{len(cfg.prompts)}x{len(EKMAN)} lambda=0 generations, {mismatches} differ, {elapsed:.1f}s (< 30s)")


def test_criterion_02_style_vector_oracle(default_model, fixture_corpus, verdict):
    start = time.perf_counter()
    sets = build_all_targets(default_model, fixture_corpus)
    elapsed = time.perf_counter() - start
    pooled = {
        label: [forward(default_model, s).acts.pooled("mean") for s in encode_samples(fixture_corpus.texts(label))]
        for label in fixture_corpus.counts
    }
    worst = 0.0
    for target in EKMAN:
        vs = sets[target]
        ref = difference_of_means(pooled[target], [pooled[c] for c in vs.provenance["contrasts"]])
        for layer in range(default_model.config.num_layers):
            rel = np.max(np.abs(vs.per_layer[layer] - ref[layer])) / np.max(np.abs(ref[layer]))
            worst = max(worst, float(rel))
    verdict(2, worst <= 1e-12 and elapsed < 10,
            f"max relative error {worst:.2e} (<= 1e-12) over 6 targets, build {elapsed:.1f}s (< 10s)")


def test_criterion_03_injection_exactness(default_model, default_vectors, verdict):
    rng = np.random.default_rng(3)
    toks = ByteTokenizer().encode("The river carried the last light downstream.")
    plain = forward(default_model, toks).acts.per_position
    layers = default_model.config.num_layers
    start = time.perf_counter()
    bad = 0
    for i in range(100):
        layer = int(rng.integers(layers))
        lam = float(rng.uniform(-1.0, 1.0))
        vs = default_vectors[EKMAN[i % 6]]
        steered = forward(default_model, toks, vs.plan(lam, (layer,))).acts.per_position
        # bitwise: injected activation equals unsteered + lambda * v at every position
        bad += not np.array_equal(steered[layer], plain[layer] + lam * vs.per_layer[layer])
        bad += not np.array_equal(steered[:layer], plain[:layer])
    elapsed = time.perf_counter() - start
    verdict(3, bad == 0 and elapsed < 10, f"100 (layer, lambda) pairs, {bad} inexact, {elapsed:.1f}s (< 10s)")


def test_criterion_04_monotone_synthetic_steering(verdict):
    start = time.perf_counter()
    curve = target_score_curve(make_setup(seed=0), GRID)
    elapsed = time.perf_counter() - start
    rho = float(sps.spearmanr(GRID, curve).statistic)
    verdict(4, rho >= 0.9 and elapsed < 120,
            f"Spearman {rho:.3f} (>= 0.9), scores {[round(c, 3) for c in curve]}, {elapsed:.1f}s (< 120s)")


def test_criterion_05_statistics_oracles(verdict):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    worst = {"pearson": 0.0, "icc": 0.0, "rm_anova": 0.0, "gg": 0.0, "mauchly": 0.0}
    for _ in range(100):
        n = int(rng.integers(3, 21))
        x, y = rng.normal(size=n), rng.normal(size=n)
        worst["pearson"] = max(worst["pearson"], abs(pearson(x, y).r - pearson_oracle(list(x), list(y))))

        mat = rng.normal(size=(int(rng.integers(3, 21)), int(rng.integers(2, 9))))
        got, ref = icc(mat), icc_oracle(mat.tolist())
        worst["icc"] = max(worst["icc"], abs(got.icc_2_1 - ref[0]), abs(got.icc_2_k - ref[1]))

        a, b = int(rng.integers(2, 7)), int(rng.integers(2, 9))
        subjects = int(rng.integers(max(3, a * b // 4), 21))
        data = rng.normal(size=(subjects, a, b)) + rng.normal(size=(subjects, 1, 1))
        table, oracle = rm_anova_two_way(data), anova_oracle(data)
        for name, key in (("E", "A"), ("lambda", "B"), ("Exlambda", "AB")):
            row, o = table[name], oracle[key]
            for attr in ("ss", "f", "p", "partial_eta_sq"):
                worst["rm_anova"] = max(worst["rm_anova"], abs(getattr(row, attr) - o[attr]))
            if key != "AB" or a * b <= subjects:
                worst["rm_anova"] = max(worst["rm_anova"], abs(row.epsilon - o["epsilon"]))

        k = int(rng.integers(2, 9))
        s = random_covariance(rng, k)
        worst["gg"] = max(worst["gg"], abs(gg_epsilon(s) - gg_oracle(s)))
        m, (w, chi, _df, p) = mauchly_w(s, 20), mauchly_oracle(s, 20)
        worst["mauchly"] = max(worst["mauchly"], abs(m.w - w), abs(m.chi_sq - chi), abs(m.p_value - p))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-9 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(5, ok, f"max abs error over 100 instances: {detail} (<= 1e-9), {elapsed:.1f}s (< 60s)")


def test_criterion_06_reference_fixture(verdict):
    table = summarize(ingest_ratings(fixture_path("reference_ratings.tsv")).records)
    checks = [
        ("anger", 0.00, "anger", 0.91), ("anger", 0.35, "anger", 3.10),
        ("disgust", 0.00, "disgust", 0.75), ("disgust", 0.35, "disgust", 4.86),
        ("surprise", 0.00, "comprehensibility", 5.88), ("surprise", 0.35, "comprehensibility", 3.17),
    ]
    got = [table.get(t, lam, d).mean for t, lam, d, _ in checks]
    ok = got == [c[3] for c in checks]
    verdict(6, ok, "summaries " + ", ".join(f"{t}/{d}@{lam:.2f}={g}" for (t, lam, d, _), g in zip(checks, got)))


def test_criterion_07_sweep_cardinality(timed_default_sweep, verdict):
    rows, elapsed = timed_default_sweep
    distinct = {}
    for r in rows:
        distinct.setdefault(r.prompt_id, set()).add(r.text)
    most = max(len(v) for v in distinct.values())
    verdict(7, len(rows) == 912 and most <= 43 and elapsed < 300,
            f"{len(rows)} rows (== 912), at most {most} distinct texts per prompt (<= 43), {elapsed:.1f}s (< 300s)")


def test_criterion_08_text_feature_identities(verdict):
    values = {
        'entropy("a a a a")': (shannon_entropy("a a a a"), 0.0),
        'entropy("a b")': (shannon_entropy("a b"), 1.0),
        'density("the cat sat")': (lexical_density("the cat sat", {"the"}), 2 / 3),
        "normalized(1)": (normalize_comprehensibility(1), 1.0),
        "normalized(10)": (normalize_comprehensibility(10), 0.0),
    }
    errors = {k: abs(g - e) for k, (g, e) in values.items()}
    verdict(8, all(e <= 1e-12 for e in errors.values()),
            ", ".join(f"{k}={g!r}" for k, (g, _) in values.items()))


def _prescreen_text(label, value, top=5.0):
    ratings = {e: 0.0 for e in EKMAN}
    ratings["surprise" if label != "surprise" else "anger"] = top
    ratings[label] = value
    return ratings, label


def test_criterion_09_prescreen(verdict):
    cases = [
        ([_prescreen_text("joy", 6.0)] * 5, (True, 5)),
        ([_prescreen_text("fear", 4.6)] * 3 + [_prescreen_text("fear", 1.0)] * 2, (True, 3)),
        ([_prescreen_text("anger", 4.4)] * 5, (False, 0)),
        # exactly max - 0.5 is still inside the threshold
        ([_prescreen_text("sadness", 4.5)] * 3 + [_prescreen_text("sadness", 0.0)] * 2, (True, 3)),
    ]
    got = [prescreen_pass(texts) for texts, _ in cases]
    verdict(9, got == [want for _, want in cases], f"outcomes {got}")


def test_criterion_10_sphericity_bounds(verdict):
    rng = np.random.default_rng(10)
    start = time.perf_counter()
    violations = 0
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        s = random_covariance(rng, k)
        e, w = gg_epsilon(s), mauchly_w(s, int(rng.integers(k + 1, 40))).w
        violations += not (1.0 / (k - 1) <= e <= 1.0) or not (0.0 < w <= 1.0)
    worst_cs = 0.0
    for k in range(2, 9):
        for var, cov in ((1.0, 0.0), (2.0, 0.7), (5.0, -0.5 / (k - 1)), (0.3, 0.29)):
            s = compound_symmetric(k, var, cov)
            worst_cs = max(worst_cs, abs(gg_epsilon(s) - 1.0), abs(mauchly_w(s, 30).w - 1.0))
    elapsed = time.perf_counter() - start
    verdict(10, violations == 0 and worst_cs <= 1e-9,
            f"1000 random covariances, {violations} out of bounds; compound symmetry max |eps-1|,|W-1| "
            f"{worst_cs:.1e} (<= 1e-9), {elapsed:.1f}s")
