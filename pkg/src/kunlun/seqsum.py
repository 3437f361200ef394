"""Sequence summarization: learnable-query pooling (PMA), hierarchical seed
pooling with Kronecker-sum compression, and the three-part summary bundle
(attention CLS tokens | compressed seed tokens | most-recent rows)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MhaParams, multi_head_attention
from .tensor import (
    Params,
    ShapeError,
    Tensor,
    add,
    concat,
    constant,
    matmul,
    rms_norm,
    slice_rows,
    transpose,
)


def pma(s: Tensor, queries: Tensor, p: MhaParams) -> Tensor:
    """Pooling by multi-head attention with learnable queries.

    Empty sequences summarize to zeros so downstream concatenation stays
    well-defined.
    """
    if s.shape[0] == 0:
        return constant(np.zeros(queries.shape))
    return multi_head_attention(queries, s, p)


@dataclass
class HspParams:
    """Seed embeddings, their normalization gain, the seed-attention weights,
    and the rank-k compression pairs (token-mixing map, embedding map)."""

    seeds: Tensor                       # (n_seeds, d)
    norm_gain: Tensor                   # (d,)
    attn: MhaParams
    seq_maps: list[Tensor]              # (n_seeds, n_tokens) each
    emb_maps: list[Tensor]              # (d, d) each

    def __post_init__(self):
        if self.seeds.shape[0] <= self.seq_maps[0].shape[1]:
            raise ValueError(
                f"need more seeds than output tokens for an overcomplete stage, "
                f"got {self.seeds.shape[0]} seeds for {self.seq_maps[0].shape[1]} tokens"
            )
        if len(self.seq_maps) != len(self.emb_maps) or not self.seq_maps:
            raise ValueError("need k >= 1 aligned (seq_map, emb_map) pairs")

    @classmethod
    def create(cls, params: Params, prefix: str, dim: int, n_seeds: int, n_tokens: int,
               rank: int, heads: int, rng: np.random.Generator) -> "HspParams":
        if n_seeds <= n_tokens:
            raise ValueError("n_seeds must exceed n_tokens")
        seeds = params.add(f"{prefix}/seeds", rng.normal(0.0, 1.0 / np.sqrt(dim), (n_seeds, dim)))
        gain = params.add(f"{prefix}/norm_gain", np.ones(dim))
        attn = MhaParams.create(params, f"{prefix}/attn", dim, heads, rng)
        # Start near mean-pooling: token-mix maps average seed blocks, the
        # embedding maps sit near identity, split across the k terms.
        base = np.zeros((n_seeds, n_tokens))
        bounds = np.linspace(0, n_seeds, n_tokens + 1).astype(int)
        for j in range(n_tokens):
            lo, hi = bounds[j], max(bounds[j + 1], bounds[j] + 1)
            base[lo:hi, j] = 1.0 / (hi - lo)
        seq_maps, emb_maps = [], []
        for i in range(rank):
            z = base / rank + rng.normal(0.0, 0.02, (n_seeds, n_tokens))
            w = np.eye(dim) + rng.normal(0.0, 0.02, (dim, dim))
            seq_maps.append(params.add(f"{prefix}/kron{i}/seq_map", z))
            emb_maps.append(params.add(f"{prefix}/kron{i}/emb_map", w))
        return cls(seeds, gain, attn, seq_maps, emb_maps)

    @property
    def n_seeds(self) -> int:
        return self.seeds.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.seq_maps[0].shape[1]

    @property
    def rank(self) -> int:
        return len(self.seq_maps)

    def compression_param_count(self) -> int:
        return sum(z.size for z in self.seq_maps) + sum(w.size for w in self.emb_maps)


def hsp_seed_attend(s: Tensor, p: HspParams) -> Tensor:
    """Seed-level representations: attention from normalized seeds to the
    sequence. Empty sequences give zero seed outputs."""
    if s.shape[0] == 0:
        return constant(np.zeros(p.seeds.shape))
    q = rms_norm(p.seeds, p.norm_gain)
    return multi_head_attention(q, s, p.attn)


def sumkronlinear(x: Tensor, seq_maps: list[Tensor], emb_maps: list[Tensor]) -> Tensor:
    """Rank-k joint token/embedding transform: sum_i Z_i^T X W_i.

    x is (S, D); each Z_i is (S, T_out) and each W_i is (D, D).
    """
    if len(seq_maps) != len(emb_maps) or not seq_maps:
        raise ShapeError("need k >= 1 aligned (seq_map, emb_map) pairs")
    s_rows, d = x.shape
    for z, w in zip(seq_maps, emb_maps):
        if z.shape[0] != s_rows or w.shape != (d, d):
            raise ShapeError(
                f"map shapes {z.shape} / {w.shape} incompatible with input {x.shape}"
            )
    out = None
    for z, w in zip(seq_maps, emb_maps):
        term = matmul(matmul(transpose(z), x), w)
        out = term if out is None else add(out, term)
    return out


@dataclass
class SummarySplit:
    """Token budget split: attention CLS, compressed, and recent rows."""

    n_cls: int
    n_tokens: int
    n_recent: int

    def __post_init__(self):
        if min(self.n_cls, self.n_tokens, self.n_recent) < 0 or self.n_tokens < 1:
            raise ValueError("split counts must be >= 0 with at least one compressed token")

    @property
    def total(self) -> int:
        return self.n_cls + self.n_tokens + self.n_recent

    @classmethod
    def for_budget(cls, budget: int) -> "SummarySplit":
        n_cls = budget // 4
        n_recent = budget // 4
        return cls(n_cls, budget - n_cls - n_recent, n_recent)


@dataclass
class SummaryBundle:
    """The three token groups a sequence contributes to global interaction."""

    cls_tokens: Tensor
    hsp_tokens: Tensor
    recent_tokens: Tensor

    def rows(self) -> Tensor:
        parts = [t for t in (self.cls_tokens, self.hsp_tokens, self.recent_tokens) if t.shape[0] > 0]
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)

    @property
    def total_rows(self) -> int:
        return self.cls_tokens.shape[0] + self.hsp_tokens.shape[0] + self.recent_tokens.shape[0]


@dataclass
class SummarizerParams:
    """Everything needed to produce a SummaryBundle for one event type."""

    hsp: HspParams
    cls_queries: Tensor | None
    cls_attn: MhaParams | None
    split: SummarySplit

    @classmethod
    def create(cls, params: Params, prefix: str, dim: int, split: SummarySplit,
               n_seeds: int, rank: int, heads: int, rng: np.random.Generator) -> "SummarizerParams":
        hsp = HspParams.create(params, f"{prefix}/hsp", dim, n_seeds, split.n_tokens, rank, heads, rng)
        queries = None
        attn = None
        if split.n_cls > 0:
            queries = params.add(f"{prefix}/cls_queries", rng.normal(0.0, 1.0 / np.sqrt(dim), (split.n_cls, dim)))
            attn = MhaParams.create(params, f"{prefix}/cls_attn", dim, heads, rng)
        return cls(hsp, queries, attn, split)


def recent_rows(s: Tensor, n_recent: int) -> Tensor:
    """Last n_recent rows, zero-padded at the front when the sequence is short."""
    t_len = s.shape[0]
    if n_recent == 0:
        return constant(np.zeros((0, s.shape[1])))
    take = min(n_recent, t_len)
    tail = slice_rows(s, t_len - take, t_len) if take > 0 else constant(np.zeros((0, s.shape[1])))
    if take == n_recent:
        return tail
    pad = constant(np.zeros((n_recent - take, s.shape[1])))
    return concat([pad, tail], axis=0) if take > 0 else pad


def hsp_summarize(s: Tensor, p: SummarizerParams) -> SummaryBundle:
    """Full three-part summary: [CLS | compressed seeds | recent]."""
    split = p.split
    if split.n_cls > 0:
        cls_tokens = pma(s, p.cls_queries, p.cls_attn)
    else:
        cls_tokens = constant(np.zeros((0, p.hsp.seeds.shape[1])))
    hsp_tokens = sumkronlinear(hsp_seed_attend(s, p.hsp), p.hsp.seq_maps, p.hsp.emb_maps)
    rec = recent_rows(s, split.n_recent)
    bundle = SummaryBundle(cls_tokens, hsp_tokens, rec)
    assert bundle.total_rows == split.total
    return bundle
