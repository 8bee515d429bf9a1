"""Style vectors: per-layer mean activations, contrastive differences, steered decoding."""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .corpus import DEFAULT_TOKEN_LIMIT, EKMAN, NEUTRAL, LabeledCorpus, MissingLabelError, truncate_tokens
from .transformer import (
    ByteTokenizer,
    DecodeParams,
    InjectionPlan,
    Model,
    forward,
    generate,
)

logger = logging.getLogger(__name__)

VECTOR_FILE_VERSION = 1
LAMBDA_WARN_ABOVE = 0.35
POOLING_MODES = ("mean", "last")


@dataclass(frozen=True)
class StyleLabelSet:
    target: str
    contrasts: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "contrasts", tuple(self.contrasts))
        if not self.contrasts:
            raise ValueError("at least one contrast label is required")
        if self.target in self.contrasts:
            raise ValueError(f"target {self.target!r} cannot also be a contrast")
        if len(set(self.contrasts)) != len(self.contrasts):
            raise ValueError("contrast labels must be unique")

    @classmethod
    def ekman_default(cls, target: str) -> "StyleLabelSet":
        """Other five Ekman emotions plus neutral."""
        return cls(target, tuple(e for e in EKMAN if e != target) + (NEUTRAL,))


@dataclass(frozen=True)
class MeanActivation:
    label: str
    per_layer: np.ndarray  # (layers, hidden)
    sample_count: int
    pooling: str = "mean"

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if not np.all(np.isfinite(self.per_layer)):
            raise ValueError("mean activation has non-finite components")
        self.per_layer.flags.writeable = False


@dataclass(frozen=True)
class StyleVectorSet:
    target: str
    per_layer: np.ndarray  # (layers, hidden)
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.per_layer.ndim != 2:
            raise ValueError("style vectors must be a (layers, hidden) array")
        if not self.provenance:
            raise ValueError("style vectors need provenance")
        self.per_layer.flags.writeable = False

    @property
    def num_layers(self) -> int:
        return self.per_layer.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.per_layer.shape[1]

    def plan(self, lam: float, layer_mask: Iterable[int] | None = None) -> InjectionPlan:
        mask = None if layer_mask is None else frozenset(layer_mask)
        return InjectionPlan(self.per_layer, float(lam), mask)


def collect_mean_activation(model: Model, samples: Sequence[Sequence[int]], pooling: str = "mean",
                            label: str = "", workers: int = 1) -> MeanActivation:
    """Average the pooled per-layer activations of ``samples``.

    Forward passes may run on ``workers`` threads; the sum is always taken in
    sample order so the result does not depend on scheduling.
    """
    if not samples:
        raise ValueError("collect_mean_activation needs at least one sample")
    if pooling not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {pooling!r}")

    def pooled(seq: Sequence[int]) -> np.ndarray:
        return forward(model, seq).acts.pooled(pooling)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(pooled, samples))
    else:
        vectors = [pooled(s) for s in samples]
    total = np.zeros((model.num_layers, model.hidden_dim))
    for v in vectors:
        total += v
    return MeanActivation(label, total / len(samples), len(samples), pooling)


def build_style_vectors(target_mean: MeanActivation, contrast_means: Sequence[MeanActivation],
                        provenance: Mapping[str, Any] | None = None) -> StyleVectorSet:
    """Target mean minus the average of the contrast means, layer by layer."""
    if not contrast_means:
        raise ValueError("at least one contrast mean is required")
    shape = target_mean.per_layer.shape
    for cm in contrast_means:
        if cm.per_layer.shape != shape:
            raise ValueError(f"contrast {cm.label!r} has shape {cm.per_layer.shape}, target has {shape}")
    contrast = np.mean(np.stack([cm.per_layer for cm in contrast_means]), axis=0)
    prov = {
        "target": target_mean.label,
        "contrasts": [cm.label for cm in contrast_means],
        "sample_counts": {m.label: m.sample_count for m in (target_mean, *contrast_means)},
        "pooling": target_mean.pooling,
    }
    prov.update(provenance or {})
    return StyleVectorSet(target_mean.label, target_mean.per_layer - contrast, prov)


def encode_samples(texts: Sequence[str], tokenizer=None, limit: int = DEFAULT_TOKEN_LIMIT) -> list[list[int]]:
    tok = tokenizer or ByteTokenizer()
    return [truncate_tokens(tok.encode(t), limit) for t in texts]


def build_all_targets(model: Model, corpus: LabeledCorpus, targets: Sequence[str] = EKMAN,
                      contrasts: Mapping[str, Sequence[str]] | None = None, pooling: str = "mean",
                      token_limit: int = DEFAULT_TOKEN_LIMIT, tokenizer=None,
                      workers: int = 1) -> dict[str, StyleVectorSet]:
    """Style vectors for every target; each label's mean is computed once.

    ``contrasts`` overrides the default contrast set (the other Ekman labels
    plus neutral) per target.
    """
    label_sets = {}
    for t in targets:
        if contrasts is not None and t in contrasts:
            label_sets[t] = StyleLabelSet(t, tuple(contrasts[t]))
        else:
            label_sets[t] = StyleLabelSet.ekman_default(t)
    needed = sorted({t for t in targets} | {c for ls in label_sets.values() for c in ls.contrasts})
    for label in needed:
        if corpus.counts.get(label, 0) == 0:
            raise MissingLabelError(label)

    # a sample can never be longer than the model's window
    limit = min(token_limit, model.config.max_context)
    means = {}
    for label in needed:
        seqs = encode_samples(corpus.texts(label), tokenizer, limit)
        means[label] = collect_mean_activation(model, seqs, pooling, label=label, workers=workers)
    shared = {"corpus_hash": corpus.content_hash, "model_checksum": model.checksum(),
              "token_limit": limit}
    return {
        t: build_style_vectors(means[t], [means[c] for c in label_sets[t].contrasts], shared)
        for t in targets
    }


@dataclass(frozen=True)
class GenerationResult:
    text: str
    tokens: tuple[int, ...]
    lam: float
    target: str
    layer_mask: tuple[int, ...] | None
    decode: dict
    provenance: dict
    warnings: tuple[str, ...] = ()


def steer_generate(model: Model, prompt: str | Sequence[int], vectors: StyleVectorSet, lam: float,
                   layer_mask: Iterable[int] | None = None, decode: DecodeParams | None = None,
                   tokenizer=None) -> GenerationResult:
    decode = decode or DecodeParams()
    tok = tokenizer or ByteTokenizer()
    if not np.isfinite(lam):
        raise ValueError(f"lambda must be finite, got {lam}")
    notes: list[str] = []
    if abs(lam) > LAMBDA_WARN_ABOVE:
        msg = f"lambda={lam} is above {LAMBDA_WARN_ABOVE}; expect degraded coherence"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    ids = tok.encode(prompt) if isinstance(prompt, str) else list(prompt)
    mask = None if layer_mask is None else tuple(sorted(set(layer_mask)))
    gen = generate(model, ids, vectors.plan(lam, mask), decode)
    prov = {"model_checksum": model.checksum(), **{k: v for k, v in vectors.provenance.items()}}
    return GenerationResult(
        text=tok.decode(gen.tokens),
        tokens=gen.tokens,
        lam=float(lam),
        target=vectors.target,
        layer_mask=mask,
        decode=decode.as_dict(),
        provenance=prov,
        warnings=tuple(notes) + gen.warnings,
    )


# --------------------------------------------------------------------------
# persistence

def save_style_vectors(vector_sets: Mapping[str, StyleVectorSet] | StyleVectorSet, path: str | Path) -> None:
    """JSON file; floats are written with repr precision so reloads are exact."""
    if isinstance(vector_sets, StyleVectorSet):
        vector_sets = {vector_sets.target: vector_sets}
    payload = {
        "format": "emosteer-style-vectors",
        "version": VECTOR_FILE_VERSION,
        "sets": [
            {
                "target": vs.target,
                "num_layers": vs.num_layers,
                "hidden_dim": vs.hidden_dim,
                "provenance": dict(vs.provenance),
                "vectors": vs.per_layer.tolist(),
            }
            for vs in vector_sets.values()
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_style_vectors(path: str | Path, model: Model | None = None) -> dict[str, StyleVectorSet]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "emosteer-style-vectors":
        raise ValueError(f"{path}: not a style-vector file")
    if payload.get("version") != VECTOR_FILE_VERSION:
        raise ValueError(f"{path}: unsupported version {payload.get('version')}")
    out = {}
    for entry in payload["sets"]:
        arr = np.asarray(entry["vectors"], dtype=np.float64)
        if arr.shape != (entry["num_layers"], entry["hidden_dim"]):
            raise ValueError(f"{path}: vector array shape {arr.shape} disagrees with header")
        if model is not None and arr.shape != (model.num_layers, model.hidden_dim):
            raise ValueError(
                f"{path}: vectors for {entry['target']!r} are {arr.shape}, model needs "
                f"({model.num_layers}, {model.hidden_dim})"
            )
        out[entry["target"]] = StyleVectorSet(entry["target"], arr, entry["provenance"])
    return out
