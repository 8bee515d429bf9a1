"""Automatic scoring of generated text.

Emotion intensity comes from a pluggable scorer (a weighted-lexicon baseline
ships with the package); comprehensibility from a pluggable judge on a 1-10
scale where 1 is best. Surface features: lexical density, mean word length
and word-frequency entropy.
"""
from __future__ import annotations

import json
import math
import re
import subprocess
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .corpus import EKMAN

LEXICON_EPSILON = 1e-3
_WORD = re.compile(r"[^\W\d_]+")


def words(text: str) -> list[str]:
    """Maximal alphabetic runs, lowercased."""
    return [w.lower() for w in _WORD.findall(text)]


# --------------------------------------------------------------------------
# emotion scores

@dataclass(frozen=True)
class EmotionScores:
    per_emotion: Mapping[str, float]
    distributional: bool = True
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for k, v in self.per_emotion.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"score for {k!r} is {v}, outside [0, 1]")
        if self.distributional and abs(math.fsum(self.per_emotion.values()) - 1.0) > 1e-9:
            raise ValueError("distributional scores must sum to 1")

    def __getitem__(self, emotion: str) -> float:
        return self.per_emotion[emotion]

    def argmax(self) -> str:
        return max(self.per_emotion, key=self.per_emotion.__getitem__)


class EmotionScorer(Protocol):
    def score(self, text: str) -> EmotionScores: ...


@dataclass(frozen=True)
class EmotionLexicon:
    """Word -> {emotion: weight}. Emotions keep the order they were declared in."""

    weights: Mapping[str, Mapping[str, float]]
    emotions: tuple[str, ...] = EKMAN

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, float]],
                     emotions: Sequence[str] | None = None) -> "EmotionLexicon":
        table: dict[str, dict[str, float]] = {}
        seen: list[str] = []
        for word, emotion, weight in triples:
            if weight < 0 or not math.isfinite(weight):
                raise ValueError(f"weight for {word!r}/{emotion!r} must be finite and >= 0")
            table.setdefault(word.lower(), {})[emotion] = float(weight)
            if emotion not in seen:
                seen.append(emotion)
        emos = tuple(emotions) if emotions is not None else tuple(e for e in EKMAN if e in seen) + tuple(
            e for e in seen if e not in EKMAN)
        missing = set(seen) - set(emos)
        if missing:
            raise ValueError(f"lexicon uses emotions not declared: {sorted(missing)}")
        return cls(table, emos)

    @classmethod
    def load(cls, path: str | Path, emotions: Sequence[str] | None = None) -> "EmotionLexicon":
        triples = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if lineno == 1 and parts[:3] == ["word", "emotion", "weight"]:
                    continue
                if not line.strip() or line.startswith("#"):
                    continue
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected word<TAB>emotion<TAB>weight")
                triples.append((parts[0], parts[1], float(parts[2])))
        return cls.from_triples(triples, emotions if emotions is not None else EKMAN)

    @classmethod
    def default(cls) -> "EmotionLexicon":
        return cls.load(_data("emotion_lexicon.tsv"))


class LexiconScorer:
    """Weighted lexicon hits per emotion, smoothed by ``epsilon`` and normalised."""

    def __init__(self, lexicon: EmotionLexicon | None = None, epsilon: float = LEXICON_EPSILON):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.lexicon = lexicon or EmotionLexicon.default()
        self.epsilon = epsilon

    def raw_counts(self, text: str) -> dict[str, float]:
        counts = {e: 0.0 for e in self.lexicon.emotions}
        for w in words(text):
            for emotion, weight in self.lexicon.weights.get(w, {}).items():
                counts[emotion] += weight
        return counts

    def score(self, text: str) -> EmotionScores:
        emos = self.lexicon.emotions
        if not text.strip():
            return EmotionScores({e: 1.0 / len(emos) for e in emos}, flags=("empty_text",))
        counts = self.raw_counts(text)
        smoothed = {e: counts[e] + self.epsilon for e in emos}
        total = math.fsum(smoothed.values())
        flags = () if any(counts.values()) else ("no_lexicon_hits",)
        return EmotionScores({e: v / total for e, v in smoothed.items()}, flags=flags)


def score_emotions(text: str, scorer: EmotionScorer | None = None) -> EmotionScores:
    return (scorer or LexiconScorer()).score(text)


# --------------------------------------------------------------------------
# comprehensibility

@dataclass(frozen=True)
class ComprehensibilityScore:
    raw: float  # 1 (clear) .. 10 (incomprehensible)
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 1.0 <= self.raw <= 10.0:
            raise ValueError(f"raw comprehensibility {self.raw} outside [1, 10]")

    @property
    def normalized(self) -> float:
        return normalize_comprehensibility(self.raw)


def normalize_comprehensibility(raw: float) -> float:
    """Map the 1 (best) .. 10 (worst) judge scale onto 1 (best) .. 0 (worst)."""
    return (10.0 - raw) / 9.0


class ComprehensibilityJudge(Protocol):
    def judge(self, text: str) -> ComprehensibilityScore: ...


class HeuristicJudge:
    """Scores repetition: raw = 1 + 9 * (w_rep * repeated-bigram rate + w_ttr * (1 - type/token ratio)).

    Increasing in the repetition rate, decreasing in the type-token ratio.
    """

    def __init__(self, repetition_weight: float = 0.5, ttr_weight: float = 0.5):
        if repetition_weight < 0 or ttr_weight < 0 or repetition_weight + ttr_weight > 1:
            raise ValueError("weights must be non-negative and sum to at most 1")
        self.repetition_weight = repetition_weight
        self.ttr_weight = ttr_weight

    @staticmethod
    def repetition_rate(ws: Sequence[str]) -> float:
        bigrams = list(zip(ws, ws[1:]))
        if not bigrams:
            return 0.0
        return 1.0 - len(set(bigrams)) / len(bigrams)

    def judge(self, text: str) -> ComprehensibilityScore:
        ws = words(text)
        if not ws:
            return ComprehensibilityScore(10.0, flags=("empty_text",) if not text.strip() else ("no_words",))
        ttr = len(set(ws)) / len(ws)
        badness = self.repetition_weight * self.repetition_rate(ws) + self.ttr_weight * (1.0 - ttr)
        return ComprehensibilityScore(1.0 + 9.0 * min(max(badness, 0.0), 1.0))


def default_judge_template() -> str:
    return _data("judge_prompt.txt").read_text(encoding="utf-8")


_NUMBER = re.compile(r"\d+(?:\.\d+)?")


class CallableJudge:
    """Wraps any ``fn(prompt) -> str | float``, e.g. a call into a hosted LLM."""

    def __init__(self, fn: Callable[[str], str | float], template: str | None = None):
        self.fn = fn
        self.template = template if template is not None else default_judge_template()

    def judge(self, text: str) -> ComprehensibilityScore:
        if not text.strip():
            return ComprehensibilityScore(10.0, flags=("empty_text",))
        reply = self.fn(self.template.format(text=text))
        if isinstance(reply, (int, float)):
            value = float(reply)
        else:
            m = _NUMBER.search(str(reply))
            if m is None:
                raise ValueError(f"judge reply has no number: {reply!r}")
            value = float(m.group())
        flags = ()
        if not 1.0 <= value <= 10.0:
            value = min(max(value, 1.0), 10.0)
            flags = ("clipped",)
        return ComprehensibilityScore(value, flags=flags)


def judge_comprehensibility(text: str, judge: ComprehensibilityJudge | None = None) -> ComprehensibilityScore:
    return (judge or HeuristicJudge()).judge(text)


# --------------------------------------------------------------------------
# external adapters (JSON lines over a subprocess)

def _run_jsonl(command: Sequence[str], texts: Sequence[str], timeout: float | None) -> list[dict]:
    stdin = "".join(json.dumps({"text": t}, ensure_ascii=False) + "\n" for t in texts)
    proc = subprocess.run(list(command), input=stdin, capture_output=True, text=True,
                          timeout=timeout, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"adapter {command[0]!r} exited with {proc.returncode}: {proc.stderr.strip()}")
    records = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
    if len(records) != len(texts):
        raise RuntimeError(f"adapter returned {len(records)} records for {len(texts)} texts")
    return records


class SubprocessScorer:
    """External emotion classifier speaking the JSON-lines contract.

    Each input line is ``{"text": ...}``; each output line must be
    ``{"scores": {emotion: value, ...}}`` with values in [0, 1].
    """

    def __init__(self, command: Sequence[str], distributional: bool = True, timeout: float | None = 600):
        self.command = list(command)
        self.distributional = distributional
        self.timeout = timeout

    def score_many(self, texts: Sequence[str]) -> list[EmotionScores]:
        out = []
        for rec in _run_jsonl(self.command, texts, self.timeout):
            scores = {k: float(v) for k, v in rec["scores"].items()}
            out.append(EmotionScores(scores, distributional=self.distributional))
        return out

    def score(self, text: str) -> EmotionScores:
        return self.score_many([text])[0]


class SubprocessJudge:
    """External judge: input ``{"text": ...}``, output ``{"raw": <1..10>}`` per line."""

    def __init__(self, command: Sequence[str], timeout: float | None = 600):
        self.command = list(command)
        self.timeout = timeout

    def judge_many(self, texts: Sequence[str]) -> list[ComprehensibilityScore]:
        return [ComprehensibilityScore(float(rec["raw"])) for rec in _run_jsonl(self.command, texts, self.timeout)]

    def judge(self, text: str) -> ComprehensibilityScore:
        return self.judge_many([text])[0]


# --------------------------------------------------------------------------
# surface features

def load_function_words(path: str | Path | None = None) -> frozenset[str]:
    p = Path(path) if path is not None else _data("function_words.txt")
    lines = p.read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip().lower() for w in lines if w.strip() and not w.startswith("#"))


def lexical_density(text: str, function_words: Iterable[str] | None = None) -> float:
    """Share of words not in the function-word list; 0 for text without words."""
    fw = frozenset(function_words) if function_words is not None else load_function_words()
    ws = words(text)
    if not ws:
        return 0.0
    return sum(1 for w in ws if w not in fw) / len(ws)


def mean_word_length(text: str) -> float:
    ws = words(text)
    if not ws:
        return 0.0
    return sum(len(w) for w in ws) / len(ws)


def shannon_entropy(text: str) -> float:
    """Entropy in bits of the word-frequency distribution."""
    ws = words(text)
    n = len(ws)
    if n == 0:
        return 0.0
    h = -math.fsum((c / n) * math.log2(c / n) for c in Counter(ws).values())
    return h if h > 0 else 0.0


@dataclass(frozen=True)
class TextFeatures:
    lexical_density: float
    mean_word_length: float
    entropy_bits: float
    flags: tuple[str, ...] = field(default=())


def text_features(text: str, function_words: Iterable[str] | None = None) -> TextFeatures:
    flags = () if words(text) else ("no_words",)
    return TextFeatures(lexical_density(text, function_words), mean_word_length(text),
                        shannon_entropy(text), flags)


def normalize_feature_curves(values: Sequence[float]) -> list[float]:
    """Divide a series by its maximum; an all-zero series is returned unchanged."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("empty series")
    peak = max(vals)
    if peak == 0 and all(v == 0 for v in vals):
        warnings.warn("all-zero feature series left unscaled", stacklevel=2)
        return vals
    if peak <= 0:
        raise ValueError("series needs at least one positive value")
    return [v / peak for v in vals]


def _data(name: str) -> Path:
    return Path(str(resources.files("emosteer.data") / name))
