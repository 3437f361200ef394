"""Variable-length batch storage: contiguous rows plus offsets."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


class JaggedBatch:
    """B variable-length sequences stored as (total_rows, d) values.

    ``offsets`` has B+1 entries; sample i owns rows offsets[i]:offsets[i+1].
    Per-row timestamps (seconds) are optional and must be non-decreasing
    within each sample.
    """

    def __init__(self, values: np.ndarray, offsets, timestamps=None):
        values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        if values.ndim != 2:
            raise ShapeError(f"values must be (total_rows, d), got shape {values.shape}")
        offsets = np.asarray(offsets, dtype=np.int64)
        if offsets.ndim != 1 or offsets.size < 1:
            raise ShapeError("offsets must be a 1-D array of B+1 indices")
        if offsets[0] != 0 or offsets[-1] != values.shape[0]:
            raise ValueError(
                f"offsets must start at 0 and end at total_rows={values.shape[0]}, "
                f"got [{offsets[0]}, ..., {offsets[-1]}]"
            )
        if np.any(np.diff(offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if timestamps is not None:
            timestamps = np.asarray(timestamps, dtype=np.float64)
            if timestamps.shape != (values.shape[0],):
                raise ShapeError("timestamps must have one entry per row")
            for i in range(offsets.size - 1):
                seg = timestamps[offsets[i] : offsets[i + 1]]
                if seg.size > 1 and np.any(np.diff(seg) < 0):
                    raise ValueError(f"timestamps decrease within sample {i}")
        self.values = values
        self.offsets = offsets
        self.timestamps = timestamps

    @classmethod
    def from_list(cls, arrays, timestamps=None) -> "JaggedBatch":
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        if not arrays:
            raise ValueError("need at least one sample")
        d = arrays[0].shape[1] if arrays[0].ndim == 2 else None
        if d is None:
            raise ShapeError("each sample must be a (T_i, d) array")
        lengths = [a.shape[0] for a in arrays]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        values = np.concatenate(arrays, axis=0) if sum(lengths) else np.zeros((0, d))
        ts = None
        if timestamps is not None:
            ts = np.concatenate([np.asarray(t, dtype=np.float64) for t in timestamps]) if sum(lengths) else np.zeros(0)
        return cls(values, offsets, ts)

    @property
    def batch_size(self) -> int:
        return self.offsets.size - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def sample(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i] : self.offsets[i + 1]]

    def sample_timestamps(self, i: int) -> np.ndarray | None:
        if self.timestamps is None:
            return None
        return self.timestamps[self.offsets[i] : self.offsets[i + 1]]

    def to_padded(self, max_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Right-pad to (B, max_len, d); returns (padded, valid mask)."""
        lengths = self.lengths()
        if max_len is None:
            max_len = int(lengths.max()) if lengths.size else 0
        if lengths.size and max_len < lengths.max():
            raise ValueError(f"max_len {max_len} shorter than longest sample {lengths.max()}")
        padded = np.zeros((self.batch_size, max_len, self.dim), dtype=np.float64)
        mask = np.zeros((self.batch_size, max_len), dtype=bool)
        for i in range(self.batch_size):
            rows = self.sample(i)
            padded[i, : rows.shape[0]] = rows
            mask[i, : rows.shape[0]] = True
        return padded, mask

    @classmethod
    def from_padded(cls, padded: np.ndarray, lengths) -> "JaggedBatch":
        lengths = np.asarray(lengths, dtype=np.int64)
        parts = [padded[i, : lengths[i]] for i in range(padded.shape[0])]
        if not parts:
            raise ValueError("need at least one sample")
        return cls.from_list(parts)
