"""Flat float64 parameter storage with a named layout."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

Layout = tuple[tuple[str, tuple[int, ...]], ...]


class ParamVector:
    """All learnable parameters of one model, stored as a single flat array.

    The layout, an ordered list of (name, shape) descriptors, is fixed at
    construction. ``pv[name]`` returns a reshaped view that aliases the
    flat buffer, so in-place edits through a view update the vector. Two
    vectors with the same layout are elementwise combinable through their
    ``values`` arrays.
    """

    def __init__(self, layout, values: np.ndarray | None = None):
        self.layout: Layout = tuple(
            (str(name), tuple(int(s) for s in shape)) for name, shape in layout
        )
        sizes = [int(np.prod(shape)) for _, shape in self.layout]
        self.size = int(sum(sizes))
        if values is None:
            self.values = np.zeros(self.size, dtype=np.float64)
        else:
            values = np.asarray(values, dtype=np.float64).ravel()
            if values.size != self.size:
                raise ConfigError(
                    f"parameter buffer has {values.size} elements, layout needs {self.size}"
                )
            self.values = values.copy()
        self._views: dict[str, np.ndarray] = {}
        offset = 0
        for (name, shape), size in zip(self.layout, sizes):
            if name in self._views:
                raise ConfigError(f"duplicate parameter name {name!r}")
            self._views[name] = self.values[offset : offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def same_layout(self, other: "ParamVector") -> bool:
        return self.layout == other.layout

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.layout)

    def __repr__(self) -> str:
        return f"ParamVector(size={self.size}, entries={len(self.layout)})"
