"""Dense 3-D tensors (width x height x channels) and the shared RNG.

Storage is a C-contiguous float64 numpy array of shape ``(h, w, d)``, so the
flat index of element ``(x, y, c)`` is ``((y * w) + x) * d + c`` and a single
image row is one contiguous block.

Randomness comes from numpy's ``PCG64`` bit generator wrapped in
``numpy.random.Generator``.  PCG64 (O'Neill, 2014) is a 128-bit linear
congruential state with a permuted (XSL-RR) 64-bit output; numpy guarantees
its stream for a given seed is stable across platforms and releases, which
is all the tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes or geometry do not line up."""


@dataclass(frozen=True)
class Shape3:
    width: int
    height: int
    channels: int

    def __post_init__(self):
        for name in ("width", "height", "channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ShapeError(f"invalid shape: {name}={v!r} must be a positive integer")

    @property
    def size(self) -> int:
        return self.width * self.height * self.channels

    def as_hwd(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @classmethod
    def parse(cls, text: str) -> "Shape3":
        """Parse ``"600x160x5"`` (width x height x channels)."""
        parts = text.lower().replace("×", "x").split("x")
        if len(parts) != 3:
            raise ShapeError(f"expected WxHxC, got {text!r}")
        try:
            w, h, d = (int(p) for p in parts)
        except ValueError:
            raise ShapeError(f"expected WxHxC, got {text!r}") from None
        return cls(w, h, d)

    def __str__(self):
        return f"{self.width}x{self.height}x{self.channels}"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


class Tensor3:
    """A w x h x d feature map backed by an ``(h, w, d)`` float64 array."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"Tensor3 needs a 3-D (h, w, d) array, got ndim={arr.ndim}")
        Shape3(arr.shape[1], arr.shape[0], arr.shape[2])
        self.data = arr

    @property
    def shape(self) -> Shape3:
        h, w, d = self.data.shape
        return Shape3(w, h, d)

    def get(self, x: int, y: int, c: int) -> float:
        return float(self.data[y, x, c])

    def set(self, x: int, y: int, c: int, value: float) -> None:
        self.data[y, x, c] = value

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def copy(self) -> "Tensor3":
        return Tensor3(self.data.copy())

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Tensor3({self.shape})"


Fill = Union[str, float, tuple]


def tensor_create(shape: Shape3, fill: Fill = "zeros", rng: np.random.Generator | None = None,
                  lo: float = 0.0, hi: float = 1.0, mean: float = 0.0, sd: float = 1.0) -> Tensor3:
    """Allocate a tensor.

    ``fill`` is ``"zeros"``, a number (constant fill), ``"uniform"`` (needs
    ``rng``, bounds ``lo``/``hi``) or ``"gaussian"`` (needs ``rng``, ``mean``/``sd``).
    """
    if not isinstance(shape, Shape3):
        shape = Shape3(*shape)
    hwd = shape.as_hwd()
    if isinstance(fill, str):
        if fill == "zeros":
            data = np.zeros(hwd)
        elif fill in ("uniform", "gaussian"):
            if rng is None:
                raise ValueError(f"{fill} fill needs an rng")
            if fill == "uniform":
                data = rng.uniform(lo, hi, size=hwd)
            else:
                data = rng.normal(mean, sd, size=hwd)
        else:
            raise ValueError(f"unknown fill rule {fill!r}")
    else:
        data = np.full(hwd, float(fill))
    return Tensor3(data)


def tensor_row(t: Tensor3, row_index: int) -> np.ndarray:
    """Row ``row_index`` as a (w, d) array, read left to right."""
    h = t.data.shape[0]
    if not 0 <= row_index < h:
        raise IndexError(f"row {row_index} out of range for height {h}")
    return t.data[row_index]


_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def tensor_map2(a: Tensor3, b: Tensor3, op: str) -> Tensor3:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return Tensor3(fn(a.data, b.data))


def from_values(shape: Shape3, values: Sequence[float]) -> Tensor3:
    """Build a tensor from a flat row-major value list."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != shape.size:
        raise ShapeError(f"{arr.size} values for shape {shape}")
    return Tensor3(arr.reshape(shape.as_hwd()))
