"""Flat float64 parameter vectors with named, non-overlapping segments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True, eq=False)
class Layout:
    """Maps segment names to (offset, length, shape) in a flat vector."""

    segments: Dict[str, Tuple[int, int, Tuple[int, ...]]]
    size: int

    def names(self):
        return list(self.segments)

    def segment_of(self, index: int) -> str:
        for name, (off, length, _) in self.segments.items():
            if off <= index < off + length:
                return name
        raise IndexError(index)

    def __eq__(self, other):
        return isinstance(other, Layout) and self.segments == other.segments

    def __hash__(self):
        return hash((tuple(self.segments.items()), self.size))


class LayoutBuilder:
    def __init__(self):
        self._segments: Dict[str, Tuple[int, int, Tuple[int, ...]]] = {}
        self._arrays = []
        self._size = 0

    def add(self, name: str, values: np.ndarray) -> None:
        if name in self._segments:
            raise ValueError(f"duplicate segment {name!r}")
        values = np.asarray(values, dtype=np.float64)
        self._segments[name] = (self._size, values.size, values.shape)
        self._arrays.append(values.ravel())
        self._size += values.size

    def build(self) -> "ParameterVector":
        flat = np.concatenate(self._arrays) if self._arrays else np.empty(0)
        return ParameterVector(flat, Layout(dict(self._segments), self._size))


class ParameterVector:
    """A flat vector of trainable values plus its segment layout."""

    def __init__(self, values: np.ndarray, layout: Layout):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size != layout.size:
            raise ValueError("values do not match layout size")
        self.values = values
        self.layout = layout

    def get(self, name: str) -> np.ndarray:
        off, length, shape = self.layout.segments[name]
        return self.values[off:off + length].reshape(shape)

    def set(self, name: str, values) -> None:
        off, length, shape = self.layout.segments[name]
        self.values[off:off + length] = np.asarray(values, dtype=np.float64).ravel()

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise ad.NumericalError(
                f"non-finite value in segment {self.layout.segment_of(bad)!r}")

    def __len__(self):
        return self.values.size


class GradientVector(ParameterVector):
    """Gradient with the same layout as the parameters it differentiates."""


class NumpyView:
    """Segment accessor returning plain arrays, for graph-free inference."""

    def __init__(self, params: "ParameterVector"):
        self._params = params

    def __call__(self, name: str) -> np.ndarray:
        return self._params.get(name)


class SegmentView:
    """Read-only access to segments of a parameter leaf node.

    Wrapping the flat leaf once per evaluation lets model code pull out
    reshaped differentiable views by name while gradients accumulate back
    into the single flat array.
    """

    def __init__(self, leaf: ad.Node, layout: Layout):
        self.leaf = leaf
        self.layout = layout
        self._cache = {}

    def __call__(self, name: str) -> ad.Node:
        node = self._cache.get(name)
        if node is None:
            off, length, shape = self.layout.segments[name]
            node = self.leaf[off:off + length].reshape(shape)
            self._cache[name] = node
        return node
