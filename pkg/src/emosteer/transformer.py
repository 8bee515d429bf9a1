"""Minimal numpy decoder-only transformer with activation taps and injection.

The model is a pre-norm stack::

    x = tok_emb[t] + pos_emb[p]
    for each block i:
        x = x + attn(ln1(x))
        x = x + mlp(ln2(x))
        x = x + lambda * v[i]          # only when an injection plan masks layer i
        acts[i] = x
    logits = ln_f(x) @ tok_emb.T / sqrt(hidden_dim)   # tied output embedding

All weights are float64 and derived from ``(config, seed)`` alone, so two
models built from the same config are bit-identical.
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
WEIGHT_MAGIC = b"TSTW"
WEIGHT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


class ConfigError(ValueError):
    """Invalid model configuration or weight file."""


class ContextOverflowError(ValueError):
    """Input sequence longer than the model's context window."""


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    vocab_size: int = 256
    max_context: int = 512
    seed: int = 0
    init_scale: float = 1.0

    def validate(self) -> None:
        for name in ("num_layers", "hidden_dim", "num_heads", "vocab_size", "max_context"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(
                f"hidden_dim={self.hidden_dim} is not divisible by num_heads={self.num_heads}"
            )
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not np.isfinite(self.init_scale) or self.init_scale <= 0:
            raise ConfigError("init_scale must be positive and finite")

    @property
    def mlp_dim(self) -> int:
        return 4 * self.hidden_dim

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


# Per-block parameter names in weight-file order.
BLOCK_PARAMS = ("ln1_g", "ln1_b", "w_q", "w_k", "w_v", "w_o", "ln2_g", "ln2_b", "w_1", "b_1", "w_2", "b_2")


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.hidden_dim, cfg.mlp_dim
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (cfg.vocab_size, d)),
        ("pos_emb", (cfg.max_context, d)),
    ]
    block = {
        "ln1_g": (d,), "ln1_b": (d,),
        "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
        "ln2_g": (d,), "ln2_b": (d,),
        "w_1": (d, f), "b_1": (f,), "w_2": (f, d), "b_2": (d,),
    }
    for i in range(cfg.num_layers):
        shapes.extend((f"blocks.{i}.{name}", block[name]) for name in BLOCK_PARAMS)
    shapes.extend([("ln_f_g", (d,)), ("ln_f_b", (d,))])
    return shapes


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable parameter container. Arrays are flagged read-only."""

    config: ModelConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self) -> None:
        for arr in self.params.values():
            arr.flags.writeable = False

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dim

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, _ in _param_shapes(self.config):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def _seeded_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(int(cfg.seed))
    d, f = cfg.hidden_dim, cfg.mlp_dim
    s = cfg.init_scale
    params: dict[str, np.ndarray] = {}
    # draw order is part of the determinism contract; do not reorder
    params["tok_emb"] = rng.normal(0.0, s, (cfg.vocab_size, d))
    params["pos_emb"] = rng.normal(0.0, 0.1 * s, (cfg.max_context, d))
    for i in range(cfg.num_layers):
        p = f"blocks.{i}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            params[p + name] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "w_1"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, f))
        params[p + "b_1"] = np.zeros(f)
        params[p + "w_2"] = rng.normal(0.0, 1.0 / np.sqrt(f), (f, d))
        params[p + "b_2"] = np.zeros(d)
    params["ln_f_g"] = np.ones(d)
    params["ln_f_b"] = np.zeros(d)
    return params


def new_model(config: ModelConfig, weights: str | Path | None = None) -> Model:
    """Build a model from a seeded init, or from a weight file when given.

    A weight file's header must agree with ``config`` on every dimension.
    """
    config.validate()
    if weights is None:
        return Model(config, _seeded_params(config))
    loaded = load_weights(weights, seed=config.seed)
    lc = loaded.config
    dims = ("num_layers", "hidden_dim", "num_heads", "vocab_size", "max_context")
    if any(getattr(lc, k) != getattr(config, k) for k in dims):
        raise ConfigError(f"weight file header {lc} does not match config {config}")
    return Model(config, dict(loaded.params))


def save_weights(model: Model, path: str | Path) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, cfg.num_layers, cfg.hidden_dim,
                              cfg.num_heads, cfg.vocab_size, cfg.max_context))
        for name, _ in _param_shapes(cfg):
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_weights(path: str | Path, seed: int = 0) -> Model:
    """Read a flat weight file (layout in docs/formats.md)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, version, m, d, h, v, c = _HEADER.unpack_from(raw, 0)
    if magic != WEIGHT_MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    cfg = ModelConfig(num_layers=m, hidden_dim=d, num_heads=h, vocab_size=v, max_context=c, seed=seed)
    cfg.validate()
    shapes = _param_shapes(cfg)
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(raw) != expected:
        raise ConfigError(f"{path}: expected {expected} bytes, found {len(raw)}")
    params = {}
    offset = _HEADER.size
    for name, shape in shapes:
        n = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    return Model(cfg, params)


# --------------------------------------------------------------------------
# tokenization

class ByteTokenizer:
    """UTF-8 byte-level tokenizer; ids are byte values 0..255."""

    vocab_size = 256

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Iterable[int], errors: str = "replace") -> str:
        return bytes(int(t) for t in tokens).decode("utf-8", errors=errors)


_BYTES = ByteTokenizer()


def tokenize(text: str) -> list[int]:
    return _BYTES.encode(text)


def detokenize(tokens: Iterable[int], errors: str = "strict") -> str:
    return _BYTES.decode(tokens, errors=errors)


# --------------------------------------------------------------------------
# forward pass

@dataclass(frozen=True)
class InjectionPlan:
    """Add ``lam * vectors[i]`` to the residual stream after each masked block."""

    vectors: np.ndarray  # (M, hidden_dim)
    lam: float
    layer_mask: frozenset[int] | None = None  # None means all layers

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam):
            raise ValueError(f"lambda must be finite, got {self.lam}")
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2:
            raise ValueError("injection vectors must be a (layers, hidden_dim) array")
        object.__setattr__(self, "vectors", vecs)
        if self.layer_mask is not None:
            object.__setattr__(self, "layer_mask", frozenset(int(i) for i in self.layer_mask))

    def layers(self, num_layers: int) -> frozenset[int]:
        if self.layer_mask is None:
            return frozenset(range(num_layers))
        return self.layer_mask

    def check(self, model: Model) -> None:
        if self.vectors.shape != (model.num_layers, model.hidden_dim):
            raise ValueError(
                f"injection vectors have shape {self.vectors.shape}, model expects "
                f"({model.num_layers}, {model.hidden_dim})"
            )
        bad = [i for i in self.layers(model.num_layers) if not 0 <= i < model.num_layers]
        if bad:
            raise ValueError(f"layer mask indices out of range: {sorted(bad)}")


@dataclass(frozen=True)
class LayerActivations:
    """Residual-stream outputs of every block, shape (layers, positions, hidden)."""

    per_position: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.per_position.shape[0]

    def pooled(self, mode: str = "mean") -> np.ndarray:
        """Pool over token positions -> (layers, hidden)."""
        if mode == "mean":
            return self.per_position.mean(axis=1)
        if mode == "last":
            return self.per_position[:, -1, :].copy()
        raise ValueError(f"unknown pooling mode {mode!r}")

    @property
    def per_layer(self) -> np.ndarray:
        return self.pooled("mean")


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * (x * x * x))))


@dataclass
class _KVCache:
    """Per-layer keys/values for positions already processed (decode only)."""

    keys: list[np.ndarray]    # each (heads, positions, head_dim)
    values: list[np.ndarray]

    @property
    def length(self) -> int:
        return self.keys[0].shape[1] if self.keys else 0


def _attention(x: np.ndarray, p: dict[str, np.ndarray], prefix: str, n_heads: int,
               past: tuple[np.ndarray, np.ndarray] | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    T, d = x.shape
    hd = d // n_heads
    q = (x @ p[prefix + "w_q"]).reshape(T, n_heads, hd).transpose(1, 0, 2)
    k = (x @ p[prefix + "w_k"]).reshape(T, n_heads, hd).transpose(1, 0, 2)
    v = (x @ p[prefix + "w_v"]).reshape(T, n_heads, hd).transpose(1, 0, 2)
    if past is not None:
        k = np.concatenate([past[0], k], axis=1)
        v = np.concatenate([past[1], v], axis=1)
    S = k.shape[1]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(hd)
    if T > 1:
        # query j sits at absolute position S - T + j
        allowed = np.arange(S)[None, :] <= (np.arange(T)[:, None] + (S - T))
        scores = np.where(allowed, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = (w @ v).transpose(1, 0, 2).reshape(T, d)
    return out @ p[prefix + "w_o"], k, v


@dataclass(frozen=True)
class ForwardOutput:
    logits: np.ndarray  # (positions, vocab)
    acts: LayerActivations


def _check_tokens(model: Model, toks: np.ndarray) -> None:
    if toks.ndim != 1 or toks.size == 0:
        raise ValueError("forward needs a non-empty 1-D token sequence")
    if toks.min() < 0 or toks.max() >= model.config.vocab_size:
        raise ValueError(f"token ids must lie in [0, {model.config.vocab_size})")


def _run(model: Model, toks: np.ndarray, plan: InjectionPlan | None,
         cache: _KVCache | None) -> ForwardOutput:
    cfg = model.config
    start = cache.length if cache is not None else 0
    if start + toks.size > cfg.max_context:
        raise ContextOverflowError(
            f"sequence of {start + toks.size} tokens exceeds max_context={cfg.max_context}")
    inject: frozenset[int] = frozenset()
    if plan is not None:
        plan.check(model)
        if plan.lam != 0.0:
            inject = plan.layers(cfg.num_layers)

    p = model.params
    x = p["tok_emb"][toks] + p["pos_emb"][start:start + toks.size]
    acts = np.empty((cfg.num_layers, toks.size, cfg.hidden_dim))
    fresh = cache is not None and not cache.keys
    for i in range(cfg.num_layers):
        pre = f"blocks.{i}."
        past = None if cache is None or fresh else (cache.keys[i], cache.values[i])
        a, k, v = _attention(layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"]), p, pre, cfg.num_heads, past)
        if cache is not None:
            if fresh:
                cache.keys.append(k)
                cache.values.append(v)
            else:
                cache.keys[i], cache.values[i] = k, v
        x = x + a
        h = layer_norm(x, p[pre + "ln2_g"], p[pre + "ln2_b"])
        x = x + gelu(h @ p[pre + "w_1"] + p[pre + "b_1"]) @ p[pre + "w_2"] + p[pre + "b_2"]
        if i in inject:
            x = x + plan.lam * plan.vectors[i]
        acts[i] = x
    logits = layer_norm(x, p["ln_f_g"], p["ln_f_b"]) @ p["tok_emb"].T / np.sqrt(cfg.hidden_dim)
    return ForwardOutput(logits=logits, acts=LayerActivations(acts))


def forward(model: Model, tokens: Sequence[int], plan: InjectionPlan | None = None) -> ForwardOutput:
    """Full causal forward pass, returning logits and post-injection block outputs."""
    toks = np.asarray(tokens, dtype=np.int64)
    _check_tokens(model, toks)
    return _run(model, toks, plan, None)


# --------------------------------------------------------------------------
# decoding

@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.7
    top_k: int = 40
    max_new_tokens: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0 or not np.isfinite(self.temperature):
            raise ValueError("temperature must be finite and >= 0")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0 (0 disables the cut)")

    def as_dict(self) -> dict:
        return {"temperature": self.temperature, "top_k": self.top_k,
                "max_new_tokens": self.max_new_tokens, "seed": self.seed}


@dataclass(frozen=True)
class Generation:
    tokens: tuple[int, ...]  # newly generated ids only
    warnings: tuple[str, ...] = ()


def next_token_distribution(logits: np.ndarray, temperature: float, top_k: int) -> np.ndarray:
    """Sampling distribution over the vocabulary for one logit row."""
    if temperature == 0:
        probs = np.zeros_like(logits)
        probs[int(np.argmax(logits))] = 1.0
        return probs
    z = logits / temperature
    if 0 < top_k < z.size:
        # stable order keeps ties deterministic
        keep = np.argsort(-z, kind="stable")[:top_k]
        masked = np.full_like(z, -np.inf)
        masked[keep] = z[keep]
        z = masked
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def generate(model: Model, prompt: Sequence[int], plan: InjectionPlan | None = None,
             decode: DecodeParams | None = None) -> Generation:
    """Autoregressive decode with the plan applied at every step and position.

    Keys and values of already-processed positions are reused between steps;
    when the window slides past ``max_context`` the cache is rebuilt from the
    retained tokens.
    """
    decode = decode or DecodeParams()
    decode.validate()
    if len(prompt) == 0:
        raise ValueError("prompt must contain at least one token")
    ctx = model.config.max_context
    notes: list[str] = []
    seq = [int(t) for t in prompt]
    _check_tokens(model, np.asarray(seq, dtype=np.int64))
    if len(seq) > ctx:
        msg = f"prompt of {len(seq)} tokens truncated to the last {ctx}"
        logger.warning(msg)
        notes.append(msg)
        seq = seq[-ctx:]
    rng = np.random.default_rng(int(decode.seed))
    cache = _KVCache([], [])
    logits = _run(model, np.asarray(seq, dtype=np.int64), plan, cache).logits[-1]
    out: list[int] = []
    slid = False
    for step in range(decode.max_new_tokens):
        probs = next_token_distribution(logits, decode.temperature, decode.top_k)
        if decode.temperature == 0:
            tok = int(np.argmax(probs))
        else:
            # inverse-CDF draw: exactly one uniform per step
            tok = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
            tok = min(tok, probs.size - 1)
        out.append(tok)
        seq.append(tok)
        if step == decode.max_new_tokens - 1:
            break
        if len(seq) > ctx:
            if not slid:
                msg = f"context window of {ctx} exceeded during decode; oldest tokens dropped"
                logger.warning(msg)
                notes.append(msg)
                slid = True
            seq = seq[-ctx:]
            cache = _KVCache([], [])
            logits = _run(model, np.asarray(seq, dtype=np.int64), plan, cache).logits[-1]
        else:
            logits = _run(model, np.asarray([tok], dtype=np.int64), plan, cache).logits[-1]
    return Generation(tokens=tuple(out), warnings=tuple(notes))
