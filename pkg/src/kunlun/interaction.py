"""Global interaction: concatenate non-sequence tokens with sequence
summaries, run each expert on its token partition (pairwise-dot block plus a
deep rowwise MLP, both residual-gated), and aggregate back to the
non-sequence width."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import Mlp
from .tensor import (
    Params,
    ShapeError,
    Tensor,
    add,
    concat,
    matmul,
    matvec,
    mul,
    record,
    reshape,
    slice_rows,
    transpose,
)


@dataclass
class ExpertPartition:
    """Contiguous, disjoint token ranges covering the combined input."""

    ranges: list[tuple[int, int]]

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("need at least one expert range")
        pos = 0
        for i, (a, b) in enumerate(self.ranges):
            if a != pos or b <= a:
                raise ValueError(f"range {i} = [{a}, {b}) must be non-empty and contiguous from {pos}")
            pos = b
        self.total = pos

    @property
    def num_experts(self) -> int:
        return len(self.ranges)

    @classmethod
    def contiguous(cls, total: int, num_experts: int) -> "ExpertPartition":
        """Balanced contiguous split of ``total`` tokens."""
        if num_experts < 1 or num_experts > total:
            raise ValueError(f"cannot split {total} tokens across {num_experts} experts")
        base, extra = divmod(total, num_experts)
        ranges, pos = [], 0
        for i in range(num_experts):
            size = base + (1 if i < extra else 0)
            ranges.append((pos, pos + size))
            pos += size
        return cls(ranges)


def triu_flatten(gram: Tensor) -> Tensor:
    """Upper triangle (including the diagonal) of a square matrix as a vector."""
    n = gram.shape[0]
    if gram.shape != (n, n):
        raise ShapeError(f"expected a square matrix, got {gram.shape}")
    rows, cols = np.triu_indices(n)
    out = Tensor(gram.data[rows, cols].copy())

    def vjp(g):
        full = np.zeros((n, n))
        full[rows, cols] = g
        return (full,)

    return record(out, (gram,), vjp)


@dataclass
class WukongExpertParams:
    """One expert: pairwise-dot compression back to its tokens, a deep
    rowwise MLP, and scalar gates on both branches."""

    dot_map: Tensor          # (n_i * d, n_i*(n_i+1)/2)
    deep: Mlp                # d -> hidden -> d rowwise
    gate_dot: Tensor         # scalar
    gate_deep: Tensor        # scalar

    @classmethod
    def create(cls, params: Params, prefix: str, n_tokens: int, dim: int, hidden: int,
               rng: np.random.Generator) -> "WukongExpertParams":
        n_pairs = n_tokens * (n_tokens + 1) // 2
        dot_map = params.add(
            f"{prefix}/dot_map", rng.normal(0.0, 0.1 / np.sqrt(n_pairs), (n_tokens * dim, n_pairs))
        )
        deep = Mlp.create(params, f"{prefix}/deep", [dim, hidden, dim], ["silu", "identity"], rng)
        gate_dot = params.add(f"{prefix}/gate_dot", np.ones(()))
        gate_deep = params.add(f"{prefix}/gate_deep", np.ones(()))
        return cls(dot_map, deep, gate_dot, gate_deep)

    @property
    def n_tokens(self) -> int:
        return self.dot_map.shape[0] // self.deep.in_dim


def wukong_expert(x: Tensor, p: WukongExpertParams) -> Tensor:
    """x + gate_deep * DeepMLP(x) + gate_dot * DotBlock(x).

    DotBlock forms the token Gram matrix, flattens its upper triangle, and
    linearly maps it back to (n_i, d).
    """
    n_i, d = x.shape
    expected_pairs = n_i * (n_i + 1) // 2
    if p.dot_map.shape != (n_i * d, expected_pairs):
        raise ShapeError(
            f"dot map shaped {p.dot_map.shape} cannot serve {n_i} tokens of dim {d}"
        )
    gram = matmul(x, transpose(x))
    dot_out = reshape(matvec(p.dot_map, triu_flatten(gram)), (n_i, d))
    deep_out = p.deep.apply_rows(x)
    return add(x, add(mul(p.gate_deep, deep_out), mul(p.gate_dot, dot_out)))


@dataclass
class InteractionParams:
    """All experts of one layer plus the aggregation map back to (n+1, d)."""

    experts: list[WukongExpertParams]
    partition: ExpertPartition
    aggregate: Tensor        # (n_out, total_combined_tokens)

    @classmethod
    def create(cls, params: Params, prefix: str, partition: ExpertPartition, n_out: int,
               dim: int, hidden: int, rng: np.random.Generator) -> "InteractionParams":
        experts = []
        for i, (a, b) in enumerate(partition.ranges):
            experts.append(WukongExpertParams.create(params, f"{prefix}/expert{i}", b - a, dim, hidden, rng))
        agg = params.add(
            f"{prefix}/aggregate", rng.normal(0.0, 0.1 / np.sqrt(partition.total), (n_out, partition.total))
        )
        return cls(experts, partition, agg)


def global_interaction(x: Tensor, summary_rows: list[Tensor], p: InteractionParams) -> Tensor:
    """Experts over [X | summaries], aggregated back to X's shape plus residual."""
    combined = concat([x] + list(summary_rows), axis=0) if summary_rows else x
    if combined.shape[0] != p.partition.total:
        raise ShapeError(
            f"partition covers {p.partition.total} tokens but got {combined.shape[0]}"
        )
    if p.aggregate.shape[0] != x.shape[0]:
        raise ShapeError("aggregation map does not restore the non-sequence token count")
    outs = []
    for expert, (a, b) in zip(p.experts, p.partition.ranges):
        outs.append(wukong_expert(slice_rows(combined, a, b), expert))
    stacked = outs[0] if len(outs) == 1 else concat(outs, axis=0)
    return add(matmul(p.aggregate, stacked), x)
