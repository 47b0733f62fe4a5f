"""Named parameter collections with fixed shapes and declared initializers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class Init:
    """Initialization spec: normal(0, std), zeros, or ones."""

    kind: str = "normal"
    std: float = 0.02

    def draw(self, shape: tuple[int, ...], rng: np.random.Generator,
             dtype) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(0.0, self.std, size=shape).astype(dtype)
        if self.kind == "zeros":
            return np.zeros(shape, dtype=dtype)
        if self.kind == "ones":
            return np.ones(shape, dtype=dtype)
        raise ValueError(f"unknown init kind {self.kind!r}")


NORMAL = Init("normal")
ZEROS = Init("zeros")
ONES = Init("ones")


class ParameterSet:
    """Unique-named map of trainable tensors; shapes frozen after add()."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], init: Init,
            rng: np.random.Generator) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(init.draw(tuple(shape), rng, self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._params.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite values in place; shapes must match exactly."""
        missing = set(self._params) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            a = np.asarray(arrays[name])
            if a.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {a.shape} vs {t.data.shape}")
            t.data = a.astype(self.dtype)

    def astype(self, dtype) -> "ParameterSet":
        out = ParameterSet(dtype)
        for name, t in self._params.items():
            nt = Tensor(t.data.astype(dtype), requires_grad=True)
            out._params[name] = nt
        return out
