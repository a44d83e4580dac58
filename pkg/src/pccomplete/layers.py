"""Parameter containers and shared per-point layers."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds named parameters and child modules; names are dotted paths."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for k, p in params.items():
            if k not in state:
                continue
            value = np.asarray(state[k])
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {value.shape} vs {p.shape}")
        for k, p in params.items():
            if k in state:
                p.data = np.array(state[k], dtype=p.dtype)


def glorot(rng, fan_in, fan_out, dtype):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng, dtype=None):
        super().__init__()
        dtype = dtype or T.get_default_dtype()
        self.fan_in, self.fan_out = fan_in, fan_out
        self.weight = self.add_param("weight", glorot(rng, fan_in, fan_out, dtype))
        self.bias = self.add_param("bias", np.zeros((1, fan_out), dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + T.tile_rows(self.bias, x.shape[0])

    def split_rows(self, sizes):
        """Row blocks of the weight matrix, for inputs that arrive as
        separately-computed column groups."""
        blocks, start = [], 0
        for n in sizes:
            blocks.append(T.gather_rows(self.weight, np.arange(start, start + n)))
            start += n
        if start != self.fan_in:
            raise ValueError(f"row blocks {sizes} do not cover fan_in {self.fan_in}")
        return blocks


class MLP(Module):
    """Stack of linear layers, ReLU between them; the last layer is linear
    unless ``final_relu``."""

    def __init__(self, fan_in: int, widths, rng, final_relu: bool = False, dtype=None):
        super().__init__()
        self.layers = []
        for i, w in enumerate(widths):
            self.layers.append(self.add_child(str(i), Linear(fan_in, w, rng, dtype)))
            fan_in = w
        self.final_relu = final_relu
        self.out_width = fan_in

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_relu:
                x = T.relu(x)
        return x
