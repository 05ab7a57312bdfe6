"""Minimal module system over :mod:`tinyvid.numerics`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def param(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=nx.get_default_dtype()), requires_grad=True)


class Module:
    """Holds parameters and submodules as attributes, named by attribute path."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(getattr(state[name], "data", state[name]))
            if value.shape != p.shape:
                raise nx.ShapeError(f"{name}: checkpoint shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return nx.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, padding: int | None = None):
        bound = 1.0 / math.sqrt(c_in * k * k)
        self.weight = param(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
        self.bias = param(np.zeros(c_out))
        self.padding = k // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return nx.conv2d(x, self.weight, self.bias, padding=self.padding)


class TemporalConv(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(c_in * k)
        self.weight = param(rng.uniform(-bound, bound, size=(c_out, c_in, k)))
        self.bias = param(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.conv1d_temporal(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int):
        if channels % groups:
            raise nx.ShapeError(f"GroupNorm: {groups} groups do not divide {channels} channels")
        self.groups = groups
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.group_norm(x, self.groups, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.weight = param(np.ones(d))
        self.bias = param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(d), size=(n, d)))

    def __call__(self, ids) -> Tensor:
        return nx.embedding(self.weight, ids)


def sinusoidal(positions, dim: int, max_period: float = 1000.0) -> np.ndarray:
    """Fixed sinusoidal features, shape [*positions.shape, dim]."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = positions[..., None] * freqs
    out = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        out = np.concatenate([out, np.zeros(out.shape[:-1] + (1,))], axis=-1)
    return out.astype(nx.get_default_dtype())
