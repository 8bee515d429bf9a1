"""Independent reference implementations used as test oracles.

These deliberately avoid the package's code paths: explicit loops, textbook
formulas, and scipy where a library value is the natural reference.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


# -- transformer -----------------------------------------------------------

def _ln(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return np.array([(x - mu) / math.sqrt(var + eps) for x in v]) * g + b


def _gelu(x):
    return np.array([0.5 * t * (1 + math.tanh(math.sqrt(2 / math.pi) * (t + 0.044715 * t ** 3))) for t in x])


def forward_oracle(model, tokens, vectors=None, lam=0.0, mask=None):
    """Position-by-position, head-by-head forward pass with manual injection."""
    p, cfg = model.params, model.config
    d, H = cfg.hidden_dim, cfg.num_heads
    hd = d // H
    T = len(tokens)
    xs = [p["tok_emb"][t] + p["pos_emb"][i] for i, t in enumerate(tokens)]
    acts = np.zeros((cfg.num_layers, T, d))
    for layer in range(cfg.num_layers):
        pre = f"blocks.{layer}."
        hs = [_ln(x, p[pre + "ln1_g"], p[pre + "ln1_b"]) for x in xs]
        qs = [h @ p[pre + "w_q"] for h in hs]
        ks = [h @ p[pre + "w_k"] for h in hs]
        vs = [h @ p[pre + "w_v"] for h in hs]
        new = []
        for t in range(T):
            heads = []
            for head in range(H):
                sl = slice(head * hd, (head + 1) * hd)
                sc = [float(qs[t][sl] @ ks[s][sl]) / math.sqrt(hd) for s in range(t + 1)]
                m = max(sc)
                ws = [math.exp(c - m) for c in sc]
                z = sum(ws)
                heads.append(sum((w / z) * vs[s][sl] for s, w in enumerate(ws)))
            x = xs[t] + np.concatenate(heads) @ p[pre + "w_o"]
            h2 = _ln(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
            x = x + _gelu(h2 @ p[pre + "w_1"] + p[pre + "b_1"]) @ p[pre + "w_2"] + p[pre + "b_2"]
            if vectors is not None and (mask is None or layer in mask):
                x = x + lam * vectors[layer]
            new.append(x)
            acts[layer, t] = x
        xs = new
    logits = np.array([_ln(x, p["ln_f_g"], p["ln_f_b"]) @ p["tok_emb"].T / math.sqrt(d) for x in xs])
    return logits, acts


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


# -- steering ----------------------------------------------------------------

def difference_of_means(target_rows, contrast_groups):
    """v = mean(target) - mean over groups of mean(group), with explicit sums."""
    def mean(rows):
        acc = np.zeros_like(rows[0])
        for r in rows:
            acc = acc + r
        return acc / len(rows)

    c = np.zeros_like(target_rows[0])
    for g in contrast_groups:
        c = c + mean(g)
    return mean(target_rows) - c / len(contrast_groups)


# -- statistics ----------------------------------------------------------------

def pearson_oracle(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    return sxy / math.sqrt(sxx * syy)


def icc_oracle(y):
    """Shrout & Fleiss ICC(2,1) and ICC(2,k) from looped mean squares."""
    n, k = len(y), len(y[0])
    grand = sum(sum(r) for r in y) / (n * k)
    rows = [sum(r) / k for r in y]
    cols = [sum(y[i][j] for i in range(n)) / n for j in range(k)]
    ss_tot = sum((y[i][j] - grand) ** 2 for i in range(n) for j in range(k))
    ss_r = k * sum((m - grand) ** 2 for m in rows)
    ss_c = n * sum((m - grand) ** 2 for m in cols)
    ss_e = ss_tot - ss_r - ss_c
    msr, msc, mse = ss_r / (n - 1), ss_c / (k - 1), ss_e / ((n - 1) * (k - 1))
    icc1 = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)
    icck = (msr - mse) / (msr + (msc - mse) / n)
    return icc1, icck


def gg_oracle(s):
    """Greenhouse-Geisser epsilon from the raw k x k covariance (double-centred form)."""
    s = np.asarray(s, dtype=np.float64)
    k = s.shape[0]
    mean_diag = sum(s[i, i] for i in range(k)) / k
    grand = sum(s[i, j] for i in range(k) for j in range(k)) / k**2
    row = [sum(s[i, j] for j in range(k)) / k for i in range(k)]
    num = k**2 * (mean_diag - grand) ** 2
    den = (k - 1) * (sum(s[i, j] ** 2 for i in range(k) for j in range(k))
                     - 2 * k * sum(r * r for r in row) + k**2 * grand**2)
    if den == 0:
        return 1.0
    return min(1.0, max(1.0 / (k - 1), num / den))


def mauchly_oracle(s, n):
    """W from the nonzero eigenvalues of the double-centred covariance."""
    s = np.asarray(s, dtype=np.float64)
    k = s.shape[0]
    h = np.eye(k) - np.ones((k, k)) / k
    ev = np.sort(np.linalg.eigvalsh(h @ s @ h))[1:]  # drop the structural zero
    p = k - 1
    w = float(np.prod(ev) / np.mean(ev) ** p)
    chi = -((n - 1) - (2 * p * p + p + 2) / (6 * p)) * math.log(w)
    df = p * (p + 1) // 2 - 1
    if df == 0:  # a single contrast is trivially spherical
        return w, 0.0, 0, 1.0
    return w, chi, df, float(sps.chi2.sf(chi, df))


def qr_contrasts(k):
    """An orthonormal contrast basis different from Helmert (QR of centred columns)."""
    a = np.eye(k)[:, 1:] - 1.0 / k
    q, _ = np.linalg.qr(a)
    return q


def _eps_transformed(s):
    p = s.shape[0]
    e = np.trace(s) ** 2 / (p * np.sum(s * s))
    return min(1.0, max(1.0 / p, e))


def anova_oracle(y):
    """Two-way within-subject ANOVA by sums over indices. Returns dict per effect."""
    y = np.asarray(y, dtype=np.float64)
    n, a, b = y.shape
    N = n * a * b
    G = sum(y[i, j, l] for i in range(n) for j in range(a) for l in range(b)) / N
    S = [sum(y[i, j, l] for j in range(a) for l in range(b)) / (a * b) for i in range(n)]
    A = [sum(y[i, j, l] for i in range(n) for l in range(b)) / (n * b) for j in range(a)]
    B = [sum(y[i, j, l] for i in range(n) for j in range(a)) / (n * a) for l in range(b)]
    SA = [[sum(y[i, j, l] for l in range(b)) / b for j in range(a)] for i in range(n)]
    SB = [[sum(y[i, j, l] for j in range(a)) / a for l in range(b)] for i in range(n)]
    AB = [[sum(y[i, j, l] for i in range(n)) / n for l in range(b)] for j in range(a)]
    ss = {
        "total": sum((y[i, j, l] - G) ** 2 for i in range(n) for j in range(a) for l in range(b)),
        "S": sum(a * b * (S[i] - G) ** 2 for i in range(n)),
        "A": sum(n * b * (A[j] - G) ** 2 for j in range(a)),
        "B": sum(n * a * (B[l] - G) ** 2 for l in range(b)),
        "AS": sum(b * (SA[i][j] - S[i] - A[j] + G) ** 2 for i in range(n) for j in range(a)),
        "BS": sum(a * (SB[i][l] - S[i] - B[l] + G) ** 2 for i in range(n) for l in range(b)),
        "AB": sum(n * (AB[j][l] - A[j] - B[l] + G) ** 2 for j in range(a) for l in range(b)),
    }
    ss["ABS"] = ss["total"] - ss["S"] - ss["A"] - ss["B"] - ss["AS"] - ss["BS"] - ss["AB"]

    sa = np.array(SA)
    sb = np.array(SB)
    cab = np.kron(qr_contrasts(a), qr_contrasts(b))
    eps = {
        "A": gg_oracle(np.cov(sa, rowvar=False)),
        "B": gg_oracle(np.cov(sb, rowvar=False)),
        "AB": _eps_transformed(cab.T @ np.cov(y.reshape(n, a * b), rowvar=False) @ cab),
    }
    out = {}
    for eff, err, df1 in (("A", "AS", a - 1), ("B", "BS", b - 1), ("AB", "ABS", (a - 1) * (b - 1))):
        df2 = df1 * (n - 1)
        f = (ss[eff] / df1) / (ss[err] / df2)
        e = eps[eff]
        out[eff] = {
            "ss": ss[eff], "ss_error": ss[err], "df1": df1, "df2": df2, "f": f,
            "p": float(sps.f.sf(f, df1, df2)), "epsilon": e, "p_gg": float(sps.f.sf(f, df1 * e, df2 * e)),
            "partial_eta_sq": ss[eff] / (ss[eff] + ss[err]),
        }
    out["ss_total"], out["ss_subjects"] = ss["total"], ss["S"]
    return out


def random_covariance(rng, k):
    a = rng.standard_normal((k, k + 3))
    return a @ a.T / (k + 3)


def compound_symmetric(k, var, cov):
    return np.full((k, k), cov) + np.eye(k) * (var - cov)
