"""Small dense MLP applied rowwise, shared by fusion, experts, and the head."""

from __future__ import annotations

import numpy as np

from .tensor import Params, Tensor, ShapeError, activation, add, matmul, matvec, transpose


class Mlp:
    """Stack of (linear, bias, activation) applied to the last axis.

    ``widths`` is [in, h1, ..., out]; ``acts`` names one activation per
    layer ("identity" for none). Parameters are registered under
    ``prefix/w{i}`` and ``prefix/b{i}``.
    """

    def __init__(self, weights: list[Tensor], biases: list[Tensor], acts: list[str]):
        if not (len(weights) == len(biases) == len(acts)):
            raise ShapeError("mlp needs one weight, bias, and activation per layer")
        self.weights = weights
        self.biases = biases
        self.acts = acts

    @classmethod
    def create(cls, params: Params, prefix: str, widths: list[int], acts: list[str], rng: np.random.Generator) -> "Mlp":
        if len(acts) != len(widths) - 1:
            raise ShapeError("need one activation per layer")
        ws, bs = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            ws.append(params.add(f"{prefix}/w{i}", w))
            bs.append(params.add(f"{prefix}/b{i}", np.zeros(fan_out)))
        return cls(ws, bs, list(acts))

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def apply_rows(self, x: Tensor) -> Tensor:
        """x (T, in) -> (T, out)."""
        h = x
        for w, b, act in zip(self.weights, self.biases, self.acts):
            h = add(matmul(h, transpose(w)), b)
            if act != "identity":
                h = activation(h, act)
        return h

    def apply_vec(self, x: Tensor) -> Tensor:
        h = x
        for w, b, act in zip(self.weights, self.biases, self.acts):
            h = add(matvec(w, h), b)
            if act != "identity":
                h = activation(h, act)
        return h
