"""Statistics report over a ratings file: descriptives, ANOVA per dimension, ICC per emotion."""
from __future__ import annotations

import math
from typing import Sequence

from ..corpus import EKMAN
from ..stats import DIMENSIONS, RatingRecord, anova_for_dimension, icc_by_block, impute_means, koo_li_band


def analyze(records: Sequence[RatingRecord]) -> dict:
    """JSON-ready results. Missing values are mean-imputed first."""
    imp = impute_means(records)
    out: dict = {
        "imputation": {"replacements": imp.replacements, "total_values": imp.total_values, "ratio": imp.ratio},
        "anova": {},
        "icc": {},
    }
    for dim in DIMENSIONS:
        table = anova_for_dimension(imp.records, dim)
        out["anova"][dim] = {
            name: {
                "ss": e.ss, "ss_error": e.ss_error, "df1": e.df1, "df2": e.df2, "f": e.f, "p": e.p,
                "epsilon": e.epsilon, "df1_gg": e.df1_gg, "df2_gg": e.df2_gg, "p_gg": e.p_gg,
                "partial_eta_sq": e.partial_eta_sq, "mauchly_w": e.mauchly.w, "mauchly_p": e.mauchly.p_value,
            }
            for name, e in table.effects.items()
        }
    for emotion in EKMAN:
        mean, blocks = icc_by_block(imp.records, emotion)
        out["icc"][emotion] = {
            "icc_2_1": mean.icc_2_1, "icc_2_k": mean.icc_2_k, "k": mean.k, "blocks": len(blocks),
            "band_2_1": koo_li_band(mean.icc_2_1), "band_2_k": koo_li_band(mean.icc_2_k),
        }
    return out


def _num(x: float, nd: int = 2) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.{nd}f}"


def format_analysis(result: dict) -> str:
    lines = [
        f"Imputed values: {result['imputation']['replacements']} of {result['imputation']['total_values']} "
        f"({100 * result['imputation']['ratio']:.2f}%)",
        "",
        "Repeated-measures ANOVA (Greenhouse-Geisser corrected df)",
        "\t".join(["dimension", "effect", "df1", "df2", "F", "p", "partial_eta_sq", "epsilon"]),
    ]
    for dim, effects in result["anova"].items():
        for name, e in effects.items():
            lines.append("\t".join([dim, name, _num(e["df1_gg"]), _num(e["df2_gg"]), _num(e["f"]),
                                    f"{e['p_gg']:.3g}", _num(e["partial_eta_sq"], 3), _num(e["epsilon"], 3)]))
    lines += ["", "Intraclass correlation (mean over prompt blocks)",
              "\t".join(["emotion", "ICC(2,1)", "band", "ICC(2,k)", "band", "k"])]
    for emotion, r in result["icc"].items():
        lines.append("\t".join([emotion, _num(r["icc_2_1"], 3), r["band_2_1"], _num(r["icc_2_k"], 3),
                                r["band_2_k"], str(r["k"])]))
    return "\n".join(lines) + "\n"
