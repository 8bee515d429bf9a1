"""Labeled emotion corpora: loading, Ekman label mapping, truncation, sampling.

Corpus files are UTF-8 tab-separated text with a mandatory header row
``text<TAB>labels``; the labels column holds one or more raw label names
separated by commas. Mapping files are JSON objects ``{ekman_label: [raw, ...]}``
in the layout of the GoEmotions ``ekman_mapping.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)

EKMAN = ("anger", "disgust", "fear", "joy", "sadness", "surprise")
NEUTRAL = "neutral"
CATEGORIES = EKMAN + (NEUTRAL,)
DEFAULT_TOKEN_LIMIT = 300

# GoEmotions full-corpus counts after Ekman mapping, kept for documentation
# cross-checks; the corpus itself is not redistributed.
GOEMOTIONS_EKMAN_COUNTS = {
    "joy": 19440, "neutral": 17716, "surprise": 5839, "anger": 5682,
    "sadness": 3622, "disgust": 881, "fear": 814,
}


class MissingLabelError(KeyError):
    def __init__(self, label: str):
        super().__init__(label)
        self.label = label

    def __str__(self) -> str:
        return f"no samples carry the label {self.label!r}"


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    text: str
    raw_label: str
    ekman_label: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("sample text must be non-empty")
        if self.ekman_label not in CATEGORIES:
            raise ValueError(f"unknown Ekman label {self.ekman_label!r}")


@dataclass(frozen=True)
class LabelMapping:
    entries: Mapping[str, str]

    @classmethod
    def from_groups(cls, groups: Mapping[str, Sequence[str]]) -> "LabelMapping":
        entries: dict[str, str] = {}
        for target, raws in groups.items():
            if target not in CATEGORIES:
                raise CorpusFormatError(f"mapping target {target!r} is not an Ekman category")
            for raw in raws:
                if raw in entries and entries[raw] != target:
                    raise CorpusFormatError(f"raw label {raw!r} maps to both {entries[raw]!r} and {target!r}")
                entries[raw] = target
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "LabelMapping":
        groups = json.loads(Path(path).read_text(encoding="utf-8"))
        groups = {k: list(v) for k, v in groups.items()}
        # the upstream file omits neutral; it maps to itself
        if NEUTRAL not in groups and not any(NEUTRAL in v for v in groups.values()):
            groups[NEUTRAL] = [NEUTRAL]
        return cls.from_groups(groups)

    @classmethod
    def default(cls) -> "LabelMapping":
        with resources.as_file(resources.files("emosteer.data") / "ekman_mapping.json") as p:
            return cls.load(p)


def map_to_ekman(raw_label: str, mapping: LabelMapping) -> str | None:
    """Ekman category for ``raw_label``, or None when the label is unmapped."""
    return mapping.entries.get(raw_label)


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class LabeledCorpus:
    samples: tuple[LabeledSample, ...]
    counts: Mapping[str, int]
    content_hash: str
    excluded: tuple[RowError, ...] = field(default=(), compare=False)
    errors: tuple[RowError, ...] = field(default=(), compare=False)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], **kw) -> "LabeledCorpus":
        samples = tuple(samples)
        counts = dict(sorted(Counter(s.ekman_label for s in samples).items()))
        return cls(samples, counts, corpus_hash(samples), **kw)

    def texts(self, label: str) -> list[str]:
        return [s.text for s in self.samples if s.ekman_label == label]


def corpus_hash(samples: Sequence[LabeledSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(json.dumps([s.ekman_label, s.raw_label, s.text], ensure_ascii=False).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def load_corpus(path: str | Path, mapping: LabelMapping | None = None) -> LabeledCorpus:
    """Read a corpus file, keeping only rows that map to exactly one category.

    Malformed rows are reported with their line number and skipped; an
    unreadable file raises ``OSError``.
    """
    mapping = mapping or LabelMapping.default()
    samples: list[LabeledSample] = []
    excluded: list[RowError] = []
    errors: list[RowError] = []
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["text", "labels"]:
            raise CorpusFormatError(f"{path}: header must start with 'text<TAB>labels', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                errors.append(RowError(line, f"expected 2 columns, found {len(row)}"))
                continue
            text, raw = row[0], row[1]
            raws = [r.strip() for r in raw.split(",") if r.strip()]
            if not text.strip() or not raws:
                errors.append(RowError(line, "empty text or label field"))
                continue
            mapped = {map_to_ekman(r, mapping) for r in raws}
            if None in mapped:
                unmapped = [r for r in raws if map_to_ekman(r, mapping) is None]
                excluded.append(RowError(line, f"unmapped label(s) {unmapped}"))
                continue
            if len(mapped) != 1:
                excluded.append(RowError(line, f"labels {raws} map to conflicting categories {sorted(mapped)}"))
                continue
            ekman = mapped.pop()
            key = (text, ekman)
            if key in seen:
                excluded.append(RowError(line, "duplicate text+label"))
                continue
            seen.add(key)
            samples.append(LabeledSample(text, ",".join(raws), ekman))
    for err in errors:
        logger.warning("%s:%d: %s", path, err.line, err.message)
    return LabeledCorpus.from_samples(samples, excluded=tuple(excluded), errors=tuple(errors))


def truncate_tokens(seq: Sequence[int], limit: int = DEFAULT_TOKEN_LIMIT) -> list[int]:
    """Keep the first ``limit`` tokens; the tail is cut off."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    return list(seq[:limit])


def sample_per_label(corpus: LabeledCorpus, label: str, n: int, seed: int) -> list[LabeledSample]:
    """Seeded sample without replacement, in corpus order of the chosen rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = [s for s in corpus.samples if s.ekman_label == label]
    if not pool:
        raise MissingLabelError(label)
    if len(pool) <= n:
        if len(pool) < n:
            warnings.warn(f"label {label!r} has only {len(pool)} samples, {n} requested", stacklevel=2)
        return pool
    idx = sorted(random.Random(seed).sample(range(len(pool)), n))
    return [pool[i] for i in idx]


def fixture_path(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("emosteer.data") / name))
