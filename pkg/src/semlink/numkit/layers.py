"""Dense layers and plain MLPs built on the tape ops."""

from __future__ import annotations

import numpy as np

from .tensor import Param, Tensor, dense, relu


class DenseLayer:
    """Fully connected layer: y = x @ w + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 hidden: bool = True, zero_init: bool = False, name: str = ""):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            # He for relu-followed layers, 1/sqrt(fan_in) for linear outputs
            std = np.sqrt(2.0 / n_in) if hidden else np.sqrt(1.0 / n_in)
            w = rng.standard_normal((n_in, n_out)) * std
        self.w = Param(w, name=f"{name}.w")
        self.b = Param(np.zeros((1, n_out)), name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)

    def params(self) -> list[Param]:
        return [self.w, self.b]


class Mlp:
    """Stack of dense layers, ReLU between them, linear output."""

    def __init__(self, dims: tuple[int, ...], rng: np.random.Generator, name: str = "mlp"):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dims")
        self.dims = tuple(dims)
        self.layers = [
            DenseLayer(dims[i], dims[i + 1], rng,
                       hidden=(i < len(dims) - 2), name=f"{name}.{i}")
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Same forward on a plain array, no tape."""
        for i, layer in enumerate(self.layers):
            x = x @ layer.w.data + layer.b.data
            if i < len(self.layers) - 1:
                x = np.maximum(0.0, x)
        return x

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def set_trainable(self, flag: bool) -> None:
        for p in self.params():
            p.trainable = flag
