"""Named learnable tensors with gradient accumulators and Adam moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParamLookupError
from .matrix import as_matrix

__all__ = ["ParameterStore", "glorot_uniform"]


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


@dataclass
class _Entry:
    value: np.ndarray
    grad: np.ndarray
    moment1: np.ndarray = field(init=False)
    moment2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.moment1 = np.zeros_like(self.value)
        self.moment2 = np.zeros_like(self.value)


class ParameterStore:
    """Insertion-ordered map of name -> (value, grad, Adam moments).

    Values are 2-D float64 matrices. Gradient slots always match the value
    shape; zeroing gradients never touches values. The Adam step counter
    lives here because every entry advances together.
    """

    def __init__(self):
        self._entries: dict[str, _Entry] = {}
        self.step_count = 0

    def add(self, name: str, value) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name!r}")
        arr = as_matrix(value, name)
        self._entries[name] = _Entry(value=arr, grad=np.zeros_like(arr))

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def value(self, name: str) -> np.ndarray:
        return self._get(name).value

    def grad(self, name: str) -> np.ndarray:
        return self._get(name).grad

    def set_value(self, name: str, value) -> None:
        entry = self._get(name)
        arr = as_matrix(value, name)
        if arr.shape != entry.value.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {entry.value.shape}, got {arr.shape}"
            )
        entry.value = arr

    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        entry = self._get(name)
        if grad.shape != entry.value.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {grad.shape}, "
                f"parameter has {entry.value.shape}"
            )
        entry.grad = entry.grad + grad

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.grad = np.zeros_like(entry.value)

    def entries(self):
        return self._entries.items()

    def _get(self, name: str) -> _Entry:
        try:
            return self._entries[name]
        except KeyError:
            raise ParamLookupError(f"unknown parameter name: {name!r}") from None

    def copy(self) -> "ParameterStore":
        """Deep copy of values and optimizer state."""
        out = ParameterStore()
        for name, entry in self._entries.items():
            out.add(name, entry.value.copy())
            new = out._entries[name]
            new.grad = entry.grad.copy()
            new.moment1 = entry.moment1.copy()
            new.moment2 = entry.moment2.copy()
        out.step_count = self.step_count
        return out
