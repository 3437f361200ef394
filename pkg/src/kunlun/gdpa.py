"""Personalized feedforward over sequences, two ways: the original
weight-generating MLP form and its attention-style rewrite where the
generated weight matrices act as keys and values. Includes a tiled
execution path that never materializes the full score matrix and
recomputes tile scores in the backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jagged import JaggedBatch
from .tensor import (
    ACTIVATIONS,
    Params,
    ShapeError,
    Tensor,
    _ensure_finite,
    activation,
    add,
    concat,
    matmul,
    matvec,
    record,
    reshape,
    scale,
    transpose,
)

DEFAULT_ACTIVATION_CYCLE = ("silu", "relu", "identity", "tanh")


@dataclass
class GdpaConfig:
    """Capacity knobs for one personalized-attention block.

    ``n_kv`` is the generated key/value row count (the hidden width of the
    personalized two-layer MLP seen as attention). ``tau`` is the score
    temperature; the sequence max length is the recommended default.
    """

    dim: int
    heads: int
    n_kv: int = 16
    tau: float = 1.0
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("need at least one head")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.n_kv < 1:
            raise ValueError("n_kv must be >= 1")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if not self.activations:
            cycle = DEFAULT_ACTIVATION_CYCLE
            self.activations = tuple(cycle[h % len(cycle)] for h in range(self.heads))
        if len(self.activations) != self.heads:
            raise ValueError("need one activation tag per head")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class WeightGenParams:
    """Per-head query projections and the generators mapping flattened
    context summaries to key/value matrices, plus the output projection."""

    q_projs: list[Tensor]          # (d_h, dim) each
    k_gens: list[Tensor]           # (n_kv*d_h, n_sum*ctx_dim) each
    v_gens: list[Tensor]           # (n_kv*d_h, n_sum*ctx_dim) each
    out_proj: Tensor               # (dim, dim)

    @classmethod
    def create(cls, params: Params, prefix: str, cfg: GdpaConfig, n_sum: int, ctx_dim: int,
               rng: np.random.Generator, out_scale: float = 0.5) -> "WeightGenParams":
        d_h = cfg.head_dim
        fan_gen = n_sum * ctx_dim
        qs, kg, vg = [], [], []
        for h in range(cfg.heads):
            qs.append(params.add(f"{prefix}/head{h}/w_q", rng.normal(0.0, 1.0 / np.sqrt(cfg.dim), (d_h, cfg.dim))))
            kg.append(params.add(f"{prefix}/head{h}/w_kgen", rng.normal(0.0, 1.0 / np.sqrt(fan_gen), (cfg.n_kv * d_h, fan_gen))))
            vg.append(params.add(f"{prefix}/head{h}/w_vgen", rng.normal(0.0, 1.0 / np.sqrt(fan_gen), (cfg.n_kv * d_h, fan_gen))))
        out = params.add(f"{prefix}/w_out", rng.normal(0.0, out_scale / np.sqrt(cfg.dim), (cfg.dim, cfg.dim)))
        return cls(qs, kg, vg, out)


def summarize_nonseq(x: Tensor, pool: Tensor) -> Tensor:
    """Learnable linear pooling over the feature axis: X_sum = P X."""
    if pool.shape[1] != x.shape[0]:
        raise ShapeError(f"pool {pool.shape} does not match {x.shape[0]} feature rows")
    return matmul(pool, x)


def generate_kv(x_sum: Tensor, p: WeightGenParams, cfg: GdpaConfig) -> list[tuple[Tensor, Tensor]]:
    """Emit per-head (K, V) of shape (n_kv, d_h) from the flattened summary."""
    flat = reshape(x_sum, (x_sum.shape[0] * x_sum.shape[1],))
    d_h = cfg.head_dim
    kvs = []
    for kg, vg in zip(p.k_gens, p.v_gens):
        k = reshape(matvec(kg, flat), (cfg.n_kv, d_h))
        v = reshape(matvec(vg, flat), (cfg.n_kv, d_h))
        kvs.append((k, v))
    return kvs


def _head_output(q: Tensor, k: Tensor, v: Tensor, act: str, inv_tau: float) -> Tensor:
    scores = scale(matmul(q, transpose(k)), inv_tau)
    return matmul(activation(scores, act), v)


def gdpa_forward(s: Tensor, x_sum: Tensor, cfg: GdpaConfig, p: WeightGenParams,
                 kv: list[tuple[Tensor, Tensor]] | None = None) -> Tensor:
    """Attention-style personalized feedforward with residual.

    Per head: Q = S Wq^T, K/V generated from the context summary,
    O = Act(Q K^T / tau) V; heads concatenated, output-projected, added to S.
    ``kv`` lets callers reuse already-generated key/value pairs.
    """
    if s.ndim != 2 or s.shape[1] != cfg.dim:
        raise ShapeError(f"sequence must be (T, {cfg.dim}), got {s.shape}")
    if kv is None:
        kv = generate_kv(x_sum, p, cfg)
    inv_tau = 1.0 / cfg.tau
    outs = []
    for h, (wq, (k, v)) in enumerate(zip(p.q_projs, kv)):
        q = matmul(s, transpose(wq))
        outs.append(_head_output(q, k, v, cfg.activations[h], inv_tau))
    cat = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    return add(matmul(cat, transpose(p.out_proj)), s)


def gdpa_core(q: Tensor, k: Tensor, v: Tensor, act: str, inv_tau: float,
              block_t: int, block_kv: int) -> Tensor:
    """Tiled Act(Q K^T * inv_tau) V over (block_t, block_kv) tiles.

    Only one score tile exists at a time; the backward pass recomputes tile
    scores instead of storing them.
    """
    if block_t < 1 or block_kv < 1:
        raise ValueError("tile sizes must be >= 1")
    t_len, d_h = q.shape
    n_kv = k.shape[0]
    fwd, dfn = ACTIVATIONS[act]
    out_data = np.zeros((t_len, d_h))
    for t0 in range(0, t_len, block_t):
        t1 = min(t0 + block_t, t_len)
        qb = q.data[t0:t1]
        acc = np.zeros((t1 - t0, d_h))
        for k0 in range(0, n_kv, block_kv):
            k1 = min(k0 + block_kv, n_kv)
            kb_t = np.ascontiguousarray(k.data[k0:k1].T)
            z = (qb @ kb_t) * inv_tau
            acc += fwd(z) @ v.data[k0:k1]
        out_data[t0:t1] = acc
    out = Tensor(out_data)
    _ensure_finite(out.data, f"gdpa_core({act})")

    def vjp(g):
        dq = np.zeros_like(q.data)
        dk = np.zeros_like(k.data)
        dv = np.zeros_like(v.data)
        for t0 in range(0, t_len, block_t):
            t1 = min(t0 + block_t, t_len)
            qb = q.data[t0:t1]
            gb = g[t0:t1]
            for k0 in range(0, n_kv, block_kv):
                k1 = min(k0 + block_kv, n_kv)
                kb = k.data[k0:k1]
                vb = v.data[k0:k1]
                z = (qb @ np.ascontiguousarray(kb.T)) * inv_tau  # recomputed tile
                pz = fwd(z)
                dz = (gb @ vb.T) * dfn(z, pz) * inv_tau
                dq[t0:t1] += dz @ kb
                dk[k0:k1] += dz.T @ qb
                dv[k0:k1] += pz.T @ gb
        return dq, dk, dv

    return record(out, (q, k, v), vjp)


def gdpa_forward_blockwise(s: Tensor, x_sum: Tensor, cfg: GdpaConfig, p: WeightGenParams,
                           block_t: int | None = None, block_kv: int | None = None,
                           kv: list[tuple[Tensor, Tensor]] | None = None) -> Tensor:
    """Streaming-tile variant of ``gdpa_forward``; same result to <= 1e-10."""
    if s.ndim != 2 or s.shape[1] != cfg.dim:
        raise ShapeError(f"sequence must be (T, {cfg.dim}), got {s.shape}")
    if kv is None:
        kv = generate_kv(x_sum, p, cfg)
    bt = block_t if block_t is not None else max(s.shape[0], 1)
    bk = block_kv if block_kv is not None else cfg.n_kv
    inv_tau = 1.0 / cfg.tau
    outs = []
    for h, (wq, (k, v)) in enumerate(zip(p.q_projs, kv)):
        q = matmul(s, transpose(wq))
        outs.append(gdpa_core(q, k, v, cfg.activations[h], inv_tau, bt, bk))
    cat = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    return add(matmul(cat, transpose(p.out_proj)), s)


def gdpa_forward_jagged(batch: JaggedBatch, x_sums: list[Tensor], cfg: GdpaConfig,
                        p: WeightGenParams, block_t: int | None = None,
                        block_kv: int | None = None) -> JaggedBatch:
    """Apply the blockwise path per sample of a jagged batch.

    Zero-length samples pass through untouched (pure residual).
    """
    if len(x_sums) != batch.batch_size:
        raise ShapeError("need one context summary per sample")
    pieces = []
    for i in range(batch.batch_size):
        s = Tensor(batch.sample(i))
        out = gdpa_forward_blockwise(s, x_sums[i], cfg, p, block_t, block_kv)
        pieces.append(out.data)
    values = np.concatenate(pieces, axis=0) if pieces else np.zeros((0, cfg.dim))
    return JaggedBatch(values, batch.offsets.copy(), None if batch.timestamps is None else batch.timestamps.copy())


@dataclass
class PffnParams:
    """Two-layer MLP emitting a (d, d) rowwise transform from the summary."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    hidden_act: str = "silu"

    @classmethod
    def create(cls, params: Params, prefix: str, dim: int, n_sum: int, ctx_dim: int,
               hidden: int, rng: np.random.Generator) -> "PffnParams":
        fan = n_sum * ctx_dim
        w1 = params.add(f"{prefix}/w1", rng.normal(0.0, 1.0 / np.sqrt(fan), (hidden, fan)))
        b1 = params.add(f"{prefix}/b1", np.zeros(hidden))
        w2 = params.add(f"{prefix}/w2", rng.normal(0.0, 0.1 / np.sqrt(hidden), (dim * dim, hidden)))
        b2 = params.add(f"{prefix}/b2", np.zeros(dim * dim))
        return cls(w1, b1, w2, b2)


def pffn_original(x_sum: Tensor, s: Tensor, p: PffnParams) -> Tensor:
    """Original formulation: rowwise transform f(X_sum) applied to S.

    No residual; this is the non-stackable baseline kept for ablation.
    """
    dim = s.shape[1]
    flat = reshape(x_sum, (x_sum.shape[0] * x_sum.shape[1],))
    h = activation(add(matvec(p.w1, flat), p.b1), p.hidden_act)
    f = reshape(add(matvec(p.w2, h), p.b2), (dim, dim))
    return matmul(s, transpose(f))
