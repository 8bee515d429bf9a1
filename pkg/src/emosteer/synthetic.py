"""Synthetic two-style setup for checking steering end to end.

Two disjoint word classes stand in for two styles ("joy" and "sadness"). A
word-level vocabulary maps each word to one token, so a style vector built
from the two class corpora is (up to block mixing) the difference of the two
classes' mean embeddings, and the tied output embedding turns it into a
logit bias towards the target class.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import LabeledCorpus, LabeledSample
from .evaluation import EmotionLexicon, LexiconScorer
from .steering import StyleVectorSet, build_all_targets, steer_generate
from .transformer import DecodeParams, Model, ModelConfig, new_model

TARGET = "joy"
CONTRAST = "sadness"

TARGET_WORDS = ("amber", "bloom", "candle", "daisy", "ember", "fable", "glow", "honey",
                "ivory", "jolly", "kite", "lilac", "meadow", "nectar", "opal", "petal")
# Full-distribution sampling over short continuations keeps the per-prompt
# trajectories comparable across strengths; deeper stacks accumulate the shift.
SYNTHETIC_DECODE = DecodeParams(temperature=1.0, top_k=0, max_new_tokens=48, seed=0)

CONTRAST_WORDS = ("ash", "bleak", "cinder", "dusk", "echo", "fog", "grey", "hollow",
                  "iron", "jagged", "knell", "lull", "murk", "night", "oyster", "pall")


class WordVocab:
    """Whitespace word tokenizer over a closed vocabulary."""

    def __init__(self, words: Sequence[str]):
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        self.words = tuple(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def vocab_size(self) -> int:
        return len(self.words)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.index[w] for w in text.split()]
        except KeyError as exc:
            raise ValueError(f"word {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, tokens: Iterable[int]) -> str:
        return " ".join(self.words[int(t)] for t in tokens)


@dataclass(frozen=True)
class SyntheticSetup:
    vocab: WordVocab
    corpus: LabeledCorpus
    prompts: tuple[str, ...]
    scorer: LexiconScorer
    model_config: ModelConfig

    @property
    def target_ids(self) -> frozenset[int]:
        return frozenset(self.vocab.index[w] for w in TARGET_WORDS)


def make_setup(seed: int = 0, samples_per_style: int = 30, sample_len: int = 12,
               n_prompts: int = 20, prompt_len: int = 4, num_layers: int = 6,
               hidden_dim: int = 32) -> SyntheticSetup:
    rng = random.Random(seed)
    vocab = WordVocab(TARGET_WORDS + CONTRAST_WORDS)
    samples = []
    for label, pool in ((TARGET, TARGET_WORDS), (CONTRAST, CONTRAST_WORDS)):
        for _ in range(samples_per_style):
            text = " ".join(rng.choice(pool) for _ in range(sample_len))
            samples.append(LabeledSample(text, label, label))
    corpus = LabeledCorpus.from_samples(samples)
    both = TARGET_WORDS + CONTRAST_WORDS
    prompts = tuple(" ".join(rng.choice(both) for _ in range(prompt_len)) for _ in range(n_prompts))
    lexicon = EmotionLexicon.from_triples(
        [(w, TARGET, 1.0) for w in TARGET_WORDS] + [(w, CONTRAST, 1.0) for w in CONTRAST_WORDS],
        emotions=(TARGET, CONTRAST),
    )
    cfg = ModelConfig(num_layers=num_layers, hidden_dim=hidden_dim, num_heads=4,
                      vocab_size=vocab.vocab_size, max_context=128, seed=seed)
    return SyntheticSetup(vocab, corpus, prompts, LexiconScorer(lexicon), cfg)


def build_vectors(setup: SyntheticSetup, model: Model | None = None) -> tuple[Model, StyleVectorSet]:
    """Model plus the target-vs-contrast style vector for ``setup``."""
    model = model or new_model(setup.model_config)
    sets = build_all_targets(model, setup.corpus, targets=[TARGET],
                             contrasts={TARGET: [CONTRAST]}, tokenizer=setup.vocab)
    return model, sets[TARGET]


def target_score_curve(setup: SyntheticSetup, grid: Sequence[float],
                       decode: DecodeParams = SYNTHETIC_DECODE, seed_base: int = 1000) -> list[float]:
    """Mean lexicon target score over the setup's prompts at each strength.

    Prompt ``i`` is decoded with seed ``seed_base + i`` at every strength.
    """
    model, vectors = build_vectors(setup)
    curve = []
    for lam in grid:
        total = 0.0
        for i, prompt in enumerate(setup.prompts):
            d = DecodeParams(decode.temperature, decode.top_k, decode.max_new_tokens, seed_base + i)
            res = steer_generate(model, setup.vocab.encode(prompt), vectors, lam, decode=d, tokenizer=setup.vocab)
            total += setup.scorer.score(res.text).per_emotion[TARGET]
        curve.append(total / len(setup.prompts))
    return curve
