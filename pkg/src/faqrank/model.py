"""The dual-encoder network.

One shared stack encodes both sides: subword + modular positional
embeddings, six pre-norm transformer layers with single-head attention
(64-dim query/key projection), a two-headed pooling attention, and a
square-root-of-N reduction down to a sentence vector. Separate three-layer
feed-forward towers then produce the final input-side and response-side
embeddings; relevance is their raw dot product.

All forward functions are pure; run them under a GradTape to train.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nm
from .bpe import PAD, BpeVocab, TokenSequence, encode
from .errors import ConfigError, ContractError
from .numerics import Tensor

NEG_MASK = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 128
    attn_proj_dim: int = 64
    num_shared_layers: int = 6
    pooling_heads: int = 2
    tower_layers: int = 3
    final_dim: int = 128
    pos_period_1: int = 47
    pos_period_2: int = 11
    ffn_hidden_dim: int = 256
    dropout_rate: float = 0.1
    max_sequence_length: int = 60

    def __post_init__(self):
        for name in (
            "vocab_size", "embed_dim", "attn_proj_dim", "num_shared_layers",
            "pooling_heads", "tower_layers", "final_dim", "pos_period_1",
            "pos_period_2", "ffn_hidden_dim", "max_sequence_length",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if math.gcd(self.pos_period_1, self.pos_period_2) != 1:
            raise ConfigError("positional periods must be coprime")
        if self.embed_dim % self.pooling_heads != 0:
            raise ConfigError("embed_dim must divide evenly across pooling heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > 2.0 * std
    return x


def init_params(cfg: EncoderConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameters: truncated normal (std 0.02) weights, zero biases,
    unit layer-norm gains. Shared-block weights exist once; towers are
    per side."""
    rng = np.random.default_rng(seed)
    d, a, f = cfg.embed_dim, cfg.attn_proj_dim, cfg.ffn_hidden_dim
    hd = d // cfg.pooling_heads
    spec: dict[str, tuple] = {
        "embed.subword": (cfg.vocab_size, d),
        "embed.pos1": (cfg.pos_period_1, d),
        "embed.pos2": (cfg.pos_period_2, d),
    }
    for i in range(cfg.num_shared_layers):
        spec[f"block{i}.attn.wq"] = (d, a)
        spec[f"block{i}.attn.wk"] = (d, a)
        spec[f"block{i}.attn.wv"] = (d, d)
        spec[f"block{i}.attn.wo"] = (d, d)
        spec[f"block{i}.ffn.w1"] = (d, f)
        spec[f"block{i}.ffn.w2"] = (f, d)
    for h in range(cfg.pooling_heads):
        spec[f"pool.head{h}.wq"] = (d, hd)
        spec[f"pool.head{h}.wk"] = (d, hd)
        spec[f"pool.head{h}.wv"] = (d, hd)
    spec["pool.mix.w"] = (d, d)
    for side in ("input", "response"):
        for j in range(cfg.tower_layers):
            spec[f"tower.{side}.l{j}.w"] = (d, d)
        spec[f"tower.{side}.out.w"] = (d, cfg.final_dim)

    params: dict[str, Tensor] = {}
    for name in sorted(spec):
        params[name] = nm.parameter(_trunc_normal(rng, spec[name]).astype(dtype), name)

    def zeros(name, shape):
        params[name] = nm.parameter(np.zeros(shape, dtype=dtype), name)

    def ones(name, shape):
        params[name] = nm.parameter(np.ones(shape, dtype=dtype), name)

    for i in range(cfg.num_shared_layers):
        ones(f"block{i}.ln1.gain", d)
        zeros(f"block{i}.ln1.bias", d)
        ones(f"block{i}.ln2.gain", d)
        zeros(f"block{i}.ln2.bias", d)
        for proj, width in (("q", a), ("k", a), ("v", d), ("o", d)):
            zeros(f"block{i}.attn.b{proj}", width)
        zeros(f"block{i}.ffn.b1", f)
        zeros(f"block{i}.ffn.b2", d)
    ones("final_norm.gain", d)
    zeros("final_norm.bias", d)
    for h in range(cfg.pooling_heads):
        for proj in ("q", "k", "v"):
            zeros(f"pool.head{h}.b{proj}", hd)
    zeros("pool.mix.b", d)
    for side in ("input", "response"):
        for j in range(cfg.tower_layers):
            ones(f"tower.{side}.l{j}.norm.gain", d)
            zeros(f"tower.{side}.l{j}.norm.bias", d)
            zeros(f"tower.{side}.l{j}.b", d)
        zeros(f"tower.{side}.out.b", cfg.final_dim)
    return params


def copy_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: nm.parameter(p.data.copy(), k) for k, p in params.items()}


def positional_embedding(position: int, params: dict[str, Tensor]) -> np.ndarray:
    """M1[i mod L1] + M2[i mod L2]; total over all non-negative positions."""
    if position < 0:
        raise ContractError("position must be non-negative")
    m1, m2 = params["embed.pos1"].data, params["embed.pos2"].data
    return m1[position % m1.shape[0]] + m2[position % m2.shape[0]]


def pad_batch(seqs: list[TokenSequence], pad_to: int | None = None):
    """Stack token sequences into an id matrix and a 1/0 mask."""
    if not seqs:
        raise ContractError("empty batch")
    n = max(len(s) for s in seqs)
    if pad_to is not None:
        n = max(n, pad_to)
    ids = np.full((len(seqs), n), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=np.float32)
    for r, s in enumerate(seqs):
        if len(s.ids) == 0:
            raise ContractError("zero-length token sequence")
        ids[r, : len(s.ids)] = s.ids
        mask[r, : len(s.ids)] = 1.0
    return ids, mask


def _attention(x, mask_add, wq, bq, wk, bk, wv, bv):
    q = nm.add(nm.matmul(x, wq), bq)
    k = nm.add(nm.matmul(x, wk), bk)
    v = nm.add(nm.matmul(x, wv), bv)
    scores = nm.scale(nm.matmul(q, nm.swap_last2(k)), 1.0 / math.sqrt(q.shape[-1]))
    attn = nm.softmax(nm.add(scores, mask_add))
    return nm.matmul(attn, v)


def shared_encode(
    ids: np.ndarray,
    mask: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Token ids -> contextual matrix, one physical weight set for both sides.

    Padding positions are masked out of every attention softmax; their own
    rows are garbage and must be dropped by the pooling mask downstream.
    """
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ContractError(f"ids must be [batch, n>=1], got {ids.shape}")
    if train_mode and cfg.dropout_rate > 0.0 and rng is None:
        raise ContractError("train_mode with dropout needs an rng")
    n = ids.shape[1]
    positions = np.arange(n)
    pos = nm.add(
        nm.embedding_lookup(params["embed.pos1"], positions % cfg.pos_period_1),
        nm.embedding_lookup(params["embed.pos2"], positions % cfg.pos_period_2),
    )
    x = nm.add(nm.embedding_lookup(params["embed.subword"], ids), pos)
    if train_mode and cfg.dropout_rate > 0.0:
        x = nm.dropout(x, cfg.dropout_rate, rng)

    dt = params["embed.subword"].data.dtype
    mask_add = Tensor(((1.0 - mask) * NEG_MASK)[:, None, :].astype(dt))

    p = params
    for i in range(cfg.num_shared_layers):
        pre = f"block{i}"
        h = nm.layer_norm(x, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
        ctx = _attention(
            h, mask_add,
            p[f"{pre}.attn.wq"], p[f"{pre}.attn.bq"],
            p[f"{pre}.attn.wk"], p[f"{pre}.attn.bk"],
            p[f"{pre}.attn.wv"], p[f"{pre}.attn.bv"],
        )
        x = nm.add(x, nm.add(nm.matmul(ctx, p[f"{pre}.attn.wo"]), p[f"{pre}.attn.bo"]))
        h2 = nm.layer_norm(x, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
        f = nm.gelu(nm.add(nm.matmul(h2, p[f"{pre}.ffn.w1"]), p[f"{pre}.ffn.b1"]))
        if train_mode and cfg.dropout_rate > 0.0:
            f = nm.dropout(f, cfg.dropout_rate, rng)
        f = nm.add(nm.matmul(f, p[f"{pre}.ffn.w2"]), p[f"{pre}.ffn.b2"])
        x = nm.add(x, f)
    return nm.layer_norm(x, p["final_norm.gain"], p["final_norm.bias"])


def pool_attend(h: Tensor, mask: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Two-headed self-attention over the contextual matrix; heads are
    concatenated then linearly mixed."""
    dt = h.data.dtype
    mask_add = Tensor(((1.0 - mask) * NEG_MASK)[:, None, :].astype(dt))
    heads = []
    for i in range(cfg.pooling_heads):
        pre = f"pool.head{i}"
        heads.append(_attention(
            h, mask_add,
            params[f"{pre}.wq"], params[f"{pre}.bq"],
            params[f"{pre}.wk"], params[f"{pre}.bk"],
            params[f"{pre}.wv"], params[f"{pre}.bv"],
        ))
    cat = nm.concat_last(heads) if len(heads) > 1 else heads[0]
    return nm.add(nm.matmul(cat, params["pool.mix.w"]), params["pool.mix.b"])


def pool_reduce(hp: Tensor, mask: np.ndarray) -> Tensor:
    """Sum unmasked rows and divide by sqrt(unmasked length)."""
    dt = hp.data.dtype
    lengths = mask.sum(axis=1)
    if (lengths == 0).any():
        raise ContractError("a sequence with zero unmasked positions cannot be pooled")
    masked = nm.mul(hp, Tensor(mask[:, :, None].astype(dt)))
    summed = nm.sum_axis(masked, axis=1)
    return nm.mul(summed, Tensor((1.0 / np.sqrt(lengths))[:, None].astype(dt)))


def pool(h: Tensor, mask: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    return pool_reduce(pool_attend(h, mask, params, cfg), mask)


def tower(x: Tensor, side: str, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Side-specific stack: skip-connected hidden layers, then the output
    projection to final_dim."""
    if side not in ("input", "response"):
        raise ContractError(f"side must be 'input' or 'response', got {side!r}")
    t = x
    for j in range(cfg.tower_layers):
        pre = f"tower.{side}.l{j}"
        h = nm.layer_norm(t, params[f"{pre}.norm.gain"], params[f"{pre}.norm.bias"])
        t = nm.add(t, nm.gelu(nm.add(nm.matmul(h, params[f"{pre}.w"]), params[f"{pre}.b"])))
    out = f"tower.{side}.out"
    return nm.add(nm.matmul(t, params[f"{out}.w"]), params[f"{out}.b"])


def encode_batch(
    seqs: list[TokenSequence],
    side: str,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Token sequences -> [batch, final_dim] embeddings for one side."""
    ids, mask = pad_batch(seqs)
    h = shared_encode(ids, mask, params, cfg, train_mode=train_mode, rng=rng)
    return tower(pool(h, mask, params, cfg), side, params, cfg)


@dataclass
class SentenceEmbedding:
    vector: np.ndarray
    side: str


def score(a: SentenceEmbedding, b: SentenceEmbedding) -> float:
    """Raw dot product; no normalization, no temperature."""
    if a.side != "input" or b.side != "response":
        raise ContractError(f"score needs (input, response), got ({a.side}, {b.side})")
    if a.vector.shape != b.vector.shape:
        raise ContractError("embedding dimensions disagree")
    return float(a.vector @ b.vector)


@dataclass
class Model:
    """Config + parameters + the shared vocabulary, as one unit."""

    config: EncoderConfig
    params: dict[str, Tensor] = field(repr=False)
    vocab: BpeVocab = field(repr=False)

    @classmethod
    def fresh(cls, vocab: BpeVocab, config: EncoderConfig | None = None, seed: int = 0, **overrides) -> "Model":
        if config is None:
            config = EncoderConfig(vocab_size=vocab.size, **overrides)
        elif config.vocab_size != vocab.size:
            config = replace(config, vocab_size=vocab.size)
        return cls(config=config, params=init_params(config, seed=seed), vocab=vocab)

    def clone(self) -> "Model":
        return Model(config=self.config, params=copy_params(self.params), vocab=self.vocab)

    def tokenize(self, text: str) -> TokenSequence:
        return encode(self.vocab, text, max_len=self.config.max_sequence_length)

    def embed_texts(
        self,
        texts: list[str],
        side: str,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        seqs = [self.tokenize(t) for t in texts]
        return encode_batch(seqs, side, self.params, self.config, train_mode=train_mode, rng=rng)

    def embed(self, text: str, side: str) -> SentenceEmbedding:
        vec = self.embed_texts([text], side).data[0]
        return SentenceEmbedding(vector=vec, side=side)
