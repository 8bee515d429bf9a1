"""Steering sweeps over prompts x targets x strengths, with persisted results."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ..corpus import EKMAN, LabelMapping, fixture_path, load_corpus
from ..evaluation import (
    ComprehensibilityJudge,
    EmotionScorer,
    HeuristicJudge,
    LexiconScorer,
    SubprocessJudge,
    SubprocessScorer,
    EmotionLexicon,
    text_features,
)
from ..steering import StyleVectorSet, build_all_targets, load_style_vectors
from ..stats import LAMBDA_GRID
from ..transformer import ByteTokenizer, DecodeParams, Model, ModelConfig, generate, load_weights, new_model

logger = logging.getLogger(__name__)


class SweepConfigError(ValueError):
    pass


def default_prompts() -> tuple[str, ...]:
    text = (resources.files("emosteer.data") / "prompts.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


@dataclass
class SweepConfig:
    prompts: tuple[str, ...] = field(default_factory=default_prompts)
    targets: tuple[str, ...] = EKMAN
    grid: tuple[float, ...] = LAMBDA_GRID
    layer_mask: tuple[int, ...] | None = None
    temperature: float = 0.7
    top_k: int = 40
    max_new_tokens: int = 128
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: str | None = None
    corpus: str | None = None  # None -> shipped fixture corpus
    mapping: str | None = None
    vectors: str | None = None  # prebuilt style-vector file; built from corpus when absent
    pooling: str = "mean"
    token_limit: int = 300
    scorer: Any = "lexicon"  # "lexicon", {"lexicon": path} or {"command": [...]}
    judge: Any = "heuristic"  # "heuristic" or {"command": [...]}
    output_dir: str | None = None
    workers: int = 1

    def validate(self) -> None:
        if not self.prompts:
            raise SweepConfigError("prompt set is empty")
        if not self.targets:
            raise SweepConfigError("no targets configured")
        for g in self.grid:
            if not isinstance(g, (int, float)) or g != g or g in (float("inf"), float("-inf")):
                raise SweepConfigError(f"grid value {g!r} is not finite")
        DecodeParams(self.temperature, self.top_k, self.max_new_tokens, 0).validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["prompts"] = list(self.prompts)
        d["targets"] = list(self.targets)
        d["grid"] = list(self.grid)
        d["layer_mask"] = None if self.layer_mask is None else list(self.layer_mask)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SweepConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        if "model" in kw and isinstance(kw["model"], Mapping):
            kw["model"] = ModelConfig(**kw["model"])
        for key in ("prompts", "targets", "grid"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        if kw.get("layer_mask") is not None:
            kw["layer_mask"] = tuple(int(i) for i in kw["layer_mask"])
        if "grid" in kw:
            kw["grid"] = tuple(float(g) for g in kw["grid"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> SweepConfig:
    """Read a YAML/JSON config; ``overrides`` (e.g. from CLI flags) win over file values."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, Mapping):
        raise SweepConfigError(f"{path}: config must be a mapping")
    merged = dict(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    return SweepConfig.from_dict(merged)


def prompt_seed(global_seed: int, prompt_id: int) -> int:
    digest = hashlib.sha256(f"{int(global_seed)}:{int(prompt_id)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ResultRow:
    prompt_id: int
    target: str
    lam: float
    text: str
    scores: dict[str, float]
    comprehensibility_raw: float
    comprehensibility_normalized: float
    lexical_density: float
    mean_word_length: float
    entropy_bits: float
    decode: dict
    layer_mask: tuple[int, ...] | None
    model_checksum: str
    vector_provenance: dict
    flags: tuple[str, ...] = ()


def build_scorer(spec: Any) -> EmotionScorer:
    if spec in (None, "lexicon"):
        return LexiconScorer()
    if isinstance(spec, Mapping) and "lexicon" in spec:
        return LexiconScorer(EmotionLexicon.load(spec["lexicon"]))
    if isinstance(spec, Mapping) and "command" in spec:
        return SubprocessScorer(spec["command"])
    raise SweepConfigError(f"unknown scorer spec {spec!r}")


def build_judge(spec: Any) -> ComprehensibilityJudge:
    if spec in (None, "heuristic"):
        return HeuristicJudge()
    if isinstance(spec, Mapping) and "command" in spec:
        return SubprocessJudge(spec["command"])
    raise SweepConfigError(f"unknown judge spec {spec!r}")


def resolve_model(config: SweepConfig) -> Model:
    # a weight file carries its own dimensions
    if config.weights:
        return load_weights(config.weights, seed=config.model.seed)
    return new_model(config.model)


def resolve_vectors(config: SweepConfig, model: Model) -> dict[str, StyleVectorSet]:
    if config.vectors:
        return load_style_vectors(config.vectors, model)
    mapping = LabelMapping.load(config.mapping) if config.mapping else LabelMapping.default()
    corpus = load_corpus(config.corpus or fixture_path("fixture_corpus.tsv"), mapping)
    return build_all_targets(model, corpus, targets=config.targets, pooling=config.pooling,
                             token_limit=config.token_limit)


def run_sweep(config: SweepConfig, model: Model | None = None,
              vectors: Mapping[str, StyleVectorSet] | None = None,
              scorer: EmotionScorer | None = None,
              judge: ComprehensibilityJudge | None = None) -> list[ResultRow]:
    """One scored row per (prompt, target, lambda), in that canonical order.

    The unsteered (lambda = 0) text is generated once per prompt and shared by
    all targets.
    """
    config.validate()
    model = model or resolve_model(config)
    vectors = dict(vectors) if vectors is not None else resolve_vectors(config, model)
    missing = [t for t in config.targets if t not in vectors]
    if missing:
        raise SweepConfigError(f"no style vectors for targets {missing}")
    scorer = scorer or build_scorer(config.scorer)
    judge = judge or build_judge(config.judge)
    tok = ByteTokenizer()
    checksum = model.checksum()

    def decode_for(pid: int) -> DecodeParams:
        return DecodeParams(config.temperature, config.top_k, config.max_new_tokens, prompt_seed(config.seed, pid))

    jobs: list[tuple[int, str | None, float]] = []
    for pid in range(1, len(config.prompts) + 1):
        if any(lam == 0.0 for lam in config.grid):
            jobs.append((pid, None, 0.0))
        for target in config.targets:
            for lam in config.grid:
                if lam != 0.0:
                    jobs.append((pid, target, lam))

    def run_job(job: tuple[int, str | None, float]) -> tuple[tuple, tuple[str, tuple[str, ...]]]:
        pid, target, lam = job
        ids = tok.encode(config.prompts[pid - 1])
        plan = None if target is None else vectors[target].plan(lam, config.layer_mask)
        gen = generate(model, ids, plan, decode_for(pid))
        return job, (tok.decode(gen.tokens), gen.warnings)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            texts = dict(pool.map(run_job, jobs))
    else:
        texts = dict(run_job(j) for j in jobs)

    rows: list[ResultRow] = []
    scored: dict[tuple, tuple] = {}
    for pid in range(1, len(config.prompts) + 1):
        for target in config.targets:
            for lam in config.grid:
                key = (pid, None, 0.0) if lam == 0.0 else (pid, target, lam)
                text, notes = texts[key]
                if key not in scored:
                    emo = scorer.score(text)
                    comp = judge.judge(text)
                    feats = text_features(text)
                    scored[key] = (emo, comp, feats)
                emo, comp, feats = scored[key]
                rows.append(ResultRow(
                    prompt_id=pid,
                    target=target,
                    lam=float(lam),
                    text=text,
                    scores=dict(emo.per_emotion),
                    comprehensibility_raw=comp.raw,
                    comprehensibility_normalized=comp.normalized,
                    lexical_density=feats.lexical_density,
                    mean_word_length=feats.mean_word_length,
                    entropy_bits=feats.entropy_bits,
                    decode=decode_for(pid).as_dict(),
                    layer_mask=config.layer_mask,
                    model_checksum=checksum,
                    vector_provenance=dict(vectors[target].provenance),
                    flags=tuple(emo.flags) + tuple(comp.flags) + tuple(feats.flags) + tuple(notes),
                ))
    return rows


# --------------------------------------------------------------------------
# persistence

RESULT_COLUMNS = (
    "prompt_id", "target", "lambda", "text", "scores", "comprehensibility_raw",
    "comprehensibility_normalized", "lexical_density", "mean_word_length", "entropy_bits",
    "decode", "layer_mask", "model_checksum", "vector_provenance", "flags",
)


def _js(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_results(rows: Sequence[ResultRow], path: str | Path) -> None:
    """Tab-separated results, one line per row.

    The text and nested fields are JSON-encoded, which escapes tabs and
    newlines, so no column ever contains a separator. Floats use repr.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in rows:
            fields = [
                str(r.prompt_id), r.target, repr(r.lam), _js(r.text), _js(r.scores), repr(r.comprehensibility_raw),
                repr(r.comprehensibility_normalized), repr(r.lexical_density), repr(r.mean_word_length),
                repr(r.entropy_bits), _js(r.decode), _js(None if r.layer_mask is None else list(r.layer_mask)),
                r.model_checksum, _js(r.vector_provenance), _js(list(r.flags)),
            ]
            fh.write("\t".join(fields) + "\n")


def read_results(path: str | Path) -> list[ResultRow]:
    rows = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"{path}: not a results file")
        for lineno, line in enumerate(fh, start=2):
            rec = line.rstrip("\n").split("\t")
            if len(rec) != len(RESULT_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(rec)}")
            d = dict(zip(RESULT_COLUMNS, rec))
            mask = json.loads(d["layer_mask"])
            rows.append(ResultRow(
                prompt_id=int(d["prompt_id"]), target=d["target"], lam=float(d["lambda"]), text=json.loads(d["text"]),
                scores=json.loads(d["scores"]), comprehensibility_raw=float(d["comprehensibility_raw"]),
                comprehensibility_normalized=float(d["comprehensibility_normalized"]),
                lexical_density=float(d["lexical_density"]), mean_word_length=float(d["mean_word_length"]),
                entropy_bits=float(d["entropy_bits"]), decode=json.loads(d["decode"]),
                layer_mask=None if mask is None else tuple(mask), model_checksum=d["model_checksum"],
                vector_provenance=json.loads(d["vector_provenance"]), flags=tuple(json.loads(d["flags"])),
            ))
    return rows


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run(rows: Sequence[ResultRow], config: SweepConfig, out_dir: str | Path) -> Path:
    """Write results.tsv and manifest.json (config echo plus checksums) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.tsv"
    write_results(rows, results)
    manifest = {
        "config": config.to_dict(),
        "rows": len(rows),
        "results_sha256": sha256_file(results),
        "model_checksum": rows[0].model_checksum if rows else None,
        "vector_provenance": {r.target: r.vector_provenance for r in rows},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return results


def feature_means(rows: Sequence[ResultRow]) -> tuple[list[float], dict[str, list[float]]]:
    """Per-strength means of the three text features over all prompts and targets."""
    names = ("lexical_density", "mean_word_length", "entropy_bits")
    by_lam: dict[float, list[ResultRow]] = {}
    for r in rows:
        by_lam.setdefault(r.lam, []).append(r)
    lams = sorted(by_lam)
    out = {n: [sum(getattr(r, n) for r in by_lam[lam]) / len(by_lam[lam]) for lam in lams] for n in names}
    return lams, out
