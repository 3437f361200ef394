"""Multi-head attention over sequences: full quadratic and sliding-window
variants with jagged masking, plus the generic cross-attention used by the
summarizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Params,
    ShapeError,
    Tensor,
    add,
    concat,
    masked_softmax_lastdim,
    matmul,
    scale,
    transpose,
)


@dataclass
class MhaParams:
    """Per-head query/key/value projections (d -> d_h) and output map (d -> d)."""

    q_projs: list[Tensor]
    k_projs: list[Tensor]
    v_projs: list[Tensor]
    out_proj: Tensor

    @classmethod
    def create(cls, params: Params, prefix: str, dim: int, heads: int, rng: np.random.Generator,
               out_scale: float = 0.5) -> "MhaParams":
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        d_h = dim // heads
        sigma = 1.0 / np.sqrt(dim)
        qs, ks, vs = [], [], []
        for h in range(heads):
            qs.append(params.add(f"{prefix}/head{h}/w_q", rng.normal(0.0, sigma, (d_h, dim))))
            ks.append(params.add(f"{prefix}/head{h}/w_k", rng.normal(0.0, sigma, (d_h, dim))))
            vs.append(params.add(f"{prefix}/head{h}/w_v", rng.normal(0.0, sigma, (d_h, dim))))
        out = params.add(f"{prefix}/w_out", rng.normal(0.0, out_scale * sigma, (dim, dim)))
        return cls(qs, ks, vs, out)

    @property
    def heads(self) -> int:
        return len(self.q_projs)

    @property
    def head_dim(self) -> int:
        return self.q_projs[0].shape[0]


@dataclass
class WindowSpec:
    """Half-window radius in positions; position t sees keys in [t-w, t+w]."""

    w: int
    causal: bool = False

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("window radius must be >= 0")


def multi_head_attention(queries: Tensor, keys_values: Tensor, p: MhaParams,
                         mask: np.ndarray | None = None) -> Tensor:
    """Softmax attention of query rows over key/value rows. No residual.

    ``mask`` is a boolean (n_q, n_k) array; fully-masked query rows produce
    zero output rows. Scaling is 1/sqrt(d_h) per head.
    """
    if queries.ndim != 2 or keys_values.ndim != 2 or queries.shape[1] != keys_values.shape[1]:
        raise ShapeError(
            f"attention needs (n_q,d) and (n_k,d) with equal d, got {queries.shape} x {keys_values.shape}"
        )
    n_q, n_k = queries.shape[0], keys_values.shape[0]
    if mask is None:
        mask = np.ones((n_q, n_k), dtype=bool)
    inv = 1.0 / np.sqrt(p.head_dim)
    outs = []
    for wq, wk, wv in zip(p.q_projs, p.k_projs, p.v_projs):
        q = matmul(queries, transpose(wq))
        k = matmul(keys_values, transpose(wk))
        v = matmul(keys_values, transpose(wv))
        scores = scale(matmul(q, transpose(k)), inv)
        attn = masked_softmax_lastdim(scores, mask)
        outs.append(matmul(attn, v))
    cat = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    return matmul(cat, transpose(p.out_proj))


def band_mask(t_len: int, w: int, causal: bool = False) -> np.ndarray:
    """Boolean (T, T) support of the sliding window, clamped at the ends."""
    idx = np.arange(t_len)
    diff = idx[None, :] - idx[:, None]
    m = np.abs(diff) <= w
    if causal:
        m &= diff <= 0
    return m


def _length_mask(t_len: int, length: int | None) -> np.ndarray:
    valid = np.ones(t_len, dtype=bool)
    if length is not None:
        if not 0 <= length <= t_len:
            raise ValueError(f"valid length {length} outside [0, {t_len}]")
        valid[length:] = False
    return valid


def mha_full(s: Tensor, p: MhaParams, length: int | None = None) -> Tensor:
    """Full self-attention plus residual. Rows past ``length`` are padding:
    they are masked as keys and come out residual-only."""
    t_len = s.shape[0]
    valid = _length_mask(t_len, length)
    mask = valid[None, :] & valid[:, None]
    return add(multi_head_attention(s, s, p, mask), s)


def mha_window(s: Tensor, p: MhaParams, win: WindowSpec, length: int | None = None) -> Tensor:
    """Sliding-window self-attention plus residual."""
    t_len = s.shape[0]
    valid = _length_mask(t_len, length)
    mask = band_mask(t_len, win.w, win.causal) & valid[None, :] & valid[:, None]
    return add(multi_head_attention(s, s, p, mask), s)


def band_support_sizes(t_len: int, w: int, causal: bool = False) -> np.ndarray:
    """Number of keys each query position attends to under the window."""
    idx = np.arange(t_len)
    hi = np.minimum(idx + w, t_len - 1)
    lo = np.maximum(idx - w, 0)
    if causal:
        hi = idx
    return hi - lo + 1


def attention_macs(t_len: int, dim: int, support_total: int) -> int:
    """MACs for one self-attention pass: QKV + output projections and the
    score/value products over ``support_total`` (query, key) pairs."""
    return 4 * t_len * dim * dim + 2 * support_total * dim
