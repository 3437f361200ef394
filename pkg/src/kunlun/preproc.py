"""Raw features to unified embeddings: dense projection, sparse lookup,
multi-sequence fusion, and rotary temporal encoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import Mlp
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    constant,
    lookup_row,
    matvec,
    rotate_pairs,
    stack_rows,
)


@dataclass
class EventSchema:
    name: str
    vocab_size: int
    max_len: int

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError(f"event {self.name!r}: vocab size must be >= 1")
        if self.max_len < 1:
            raise ValueError(f"event {self.name!r}: max length must be >= 1")


@dataclass
class FeatureSchema:
    """Input layout: m dense values, n sparse ids, K event streams, dim d."""

    num_dense: int
    sparse_vocab_sizes: list[int]
    events: list[EventSchema]
    dim: int

    def __post_init__(self):
        if self.num_dense < 0:
            raise ValueError("dense feature count must be >= 0")
        for i, v in enumerate(self.sparse_vocab_sizes):
            if v < 1:
                raise ValueError(f"sparse feature {i}: vocab size must be >= 1")
        if self.dim < 2 or self.dim % 2 != 0:
            raise ValueError("embedding dim must be even and >= 2 (rotary pairs)")
        names = [e.name for e in self.events]
        if len(set(names)) != len(names):
            raise ValueError("event names must be unique")

    @property
    def num_sparse(self) -> int:
        return len(self.sparse_vocab_sizes)

    @property
    def num_tokens(self) -> int:
        """Rows of the assembled non-sequence matrix: dense block + n sparse."""
        return self.num_sparse + 1


@dataclass
class RoteConfig:
    """Rotation schedule combining position index and log-scaled time gaps.

    Each of the d/2 planes rotates by t*pos_freqs[i] + tau*temp_freqs[i],
    where tau = log(1 + delta_t / tau_scale).
    """

    pos_freqs: np.ndarray
    temp_freqs: np.ndarray
    tau_scale: float = 60.0
    gap_mode: str = "previous"  # or "latest": age relative to newest event

    def __post_init__(self):
        self.pos_freqs = np.asarray(self.pos_freqs, dtype=np.float64)
        self.temp_freqs = np.asarray(self.temp_freqs, dtype=np.float64)
        if self.tau_scale <= 0:
            raise ValueError("tau_scale must be positive")
        if self.pos_freqs.shape != self.temp_freqs.shape or self.pos_freqs.ndim != 1:
            raise ValueError("frequency lists must be 1-D and equally long")
        if self.gap_mode not in ("previous", "latest"):
            raise ValueError(f"unknown gap mode {self.gap_mode!r}")

    @classmethod
    def default(cls, dim: int, tau_scale: float = 60.0, gap_mode: str = "previous") -> "RoteConfig":
        if dim < 2 or dim % 2 != 0:
            raise ValueError("rotary encoding needs an even dim >= 2")
        half = dim // 2
        freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
        return cls(freqs, freqs.copy(), tau_scale, gap_mode)

    @property
    def half_dim(self) -> int:
        return self.pos_freqs.size


def embed_dense(x_dense, proj: Tensor) -> Tensor:
    """Project the m raw dense values to one d-dim row."""
    x = x_dense if isinstance(x_dense, Tensor) else constant(np.asarray(x_dense, dtype=np.float64))
    if x.ndim != 1 or proj.shape[1] != x.shape[0]:
        raise ShapeError(f"dense projection {proj.shape} does not accept input of shape {x.shape}")
    return matvec(proj, x)


def embed_sparse(index: int, table: Tensor) -> Tensor:
    """Row lookup, equivalent to a one-hot product with the table."""
    index = int(index)
    if not 0 <= index < table.shape[0]:
        raise IndexError(f"sparse id {index} outside vocab of size {table.shape[0]}")
    return lookup_row(table, index)


def assemble_nonseq(dense_emb: Tensor, sparse_embs: list[Tensor]) -> Tensor:
    """Stack dense-first into the (n+1, d) non-sequence matrix."""
    d = dense_emb.shape[0]
    for i, e in enumerate(sparse_embs):
        if e.shape != (d,):
            raise ShapeError(f"sparse embedding {i} has shape {e.shape}, expected ({d},)")
    return stack_rows([dense_emb] + list(sparse_embs))


def fuse_sequences(seqs: list[Tensor], fusion: Mlp) -> Tensor:
    """Rowwise MLP over the (T, K*d) concatenation of K aligned sequences."""
    if not seqs:
        raise ShapeError("fusion needs at least one sequence")
    t = seqs[0].shape[0]
    for s in seqs:
        if s.ndim != 2 or s.shape[0] != t:
            raise ShapeError("sequences must share length T before fusion")
    cat = seqs[0] if len(seqs) == 1 else concat(seqs, axis=1)
    if fusion.in_dim != cat.shape[1]:
        raise ShapeError(f"fusion expects width {fusion.in_dim}, got {cat.shape[1]}")
    if t == 0:
        return constant(np.zeros((0, fusion.out_dim)))
    return fusion.apply_rows(cat)


def align_right(seqs: list[np.ndarray], target_len: int) -> list[np.ndarray]:
    """Zero-pad each (T_i, d) array at the front so the newest rows align."""
    out = []
    for s in seqs:
        pad = target_len - s.shape[0]
        if pad < 0:
            raise ShapeError(f"sequence of length {s.shape[0]} exceeds target {target_len}")
        out.append(np.concatenate([np.zeros((pad, s.shape[1])), s], axis=0) if pad else s)
    return out


def temporal_angle(delta_t: float, cfg: RoteConfig) -> float:
    """Log-scaled gap value fed to the temporal frequencies."""
    if delta_t < 0:
        raise ValueError(f"time gap must be >= 0, got {delta_t}")
    return float(np.log1p(delta_t / cfg.tau_scale))


def rote_raw(x: Tensor, t: float, tau: float, cfg: RoteConfig) -> Tensor:
    """Rotation with raw angle parameters (no log transform of tau)."""
    angles = t * cfg.pos_freqs + tau * cfg.temp_freqs
    return rotate_pairs(x, np.cos(angles), np.sin(angles))


def rote(x: Tensor, t: int, delta_t: float, cfg: RoteConfig) -> Tensor:
    """Rotate one d-dim row by position t and log-scaled gap delta_t."""
    if x.shape[-1] != 2 * cfg.half_dim:
        raise ShapeError(f"rotary config covers dim {2 * cfg.half_dim}, input has {x.shape[-1]}")
    return rote_raw(x, float(t), temporal_angle(delta_t, cfg), cfg)


def gaps_from_timestamps(ts: np.ndarray, mode: str) -> np.ndarray:
    """Per-row gap Delta_t: to the previous event, or age below the newest."""
    ts = np.asarray(ts, dtype=np.float64)
    if ts.size == 0:
        return ts
    if mode == "previous":
        return np.concatenate([[0.0], np.diff(ts)])
    if mode == "latest":
        return ts[-1] - ts
    raise ValueError(f"unknown gap mode {mode!r}")


def rote_sequence(s: Tensor, timestamps: np.ndarray | None, cfg: RoteConfig) -> Tensor:
    """Apply the rotary encoding to every row of a (T, d) sequence."""
    t_len = s.shape[0]
    if t_len == 0:
        return s
    positions = np.arange(t_len, dtype=np.float64)
    if timestamps is None:
        taus = np.zeros(t_len)
    else:
        gaps = gaps_from_timestamps(timestamps, cfg.gap_mode)
        taus = np.log1p(np.maximum(gaps, 0.0) / cfg.tau_scale)
    angles = positions[:, None] * cfg.pos_freqs[None, :] + taus[:, None] * cfg.temp_freqs[None, :]
    return rotate_pairs(s, np.cos(angles), np.sin(angles))
