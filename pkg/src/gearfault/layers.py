"""Parameterised layers built on the autodiff ops."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, DimensionError


def fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container of parameters, buffers and submodules (registration order kept)."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if tuple(np.shape(value)) != target.shape:
                raise DimensionError(f"{name}: checkpoint shape {np.shape(value)} != model shape {target.shape}")
            if name in params:
                params[name].data = np.array(value, dtype=target.dtype)
            else:
                # buffers are updated in place by batch norm, keep the same array
                target[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv1d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Union[str, int] = "same",
        bias: bool = True,
        dtype=np.float32,
    ):
        super().__init__()
        if kernel_size < 1:
            raise ArgumentError(f"kernel_size must be positive, got {kernel_size}")
        fan_in = in_channels * kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = self.add_param("weight", fan_in_uniform(rng, (out_channels, in_channels, kernel_size), fan_in, dtype))
        self.bias = self.add_param("bias", fan_in_uniform(rng, (out_channels,), fan_in, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = self.add_param("weight", fan_in_uniform(rng, (out_features, in_features), in_features, dtype))
        self.bias = self.add_param("bias", fan_in_uniform(rng, (out_features,), in_features, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.dense(x, self.weight, self.bias)


class LSTM(Module):
    """Single-layer LSTM returning the last hidden state."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.hidden_size = hidden_size
        shape_ih = (4 * hidden_size, input_size)
        shape_hh = (4 * hidden_size, hidden_size)
        self.w_ih = self.add_param("w_ih", fan_in_uniform(rng, shape_ih, hidden_size, dtype))
        self.w_hh = self.add_param("w_hh", fan_in_uniform(rng, shape_hh, hidden_size, dtype))
        self.bias = self.add_param("bias", fan_in_uniform(rng, (4 * hidden_size,), hidden_size, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.lstm(x, self.w_ih, self.w_hh, self.bias)


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.p = p
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.p, self.training, self.rng)
