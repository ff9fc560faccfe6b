"""Small layer helpers over a ParamTable: parameters are created once by name
and looked up by the same name in the forward pass."""
from __future__ import annotations

from .autodiff import ops
from .autodiff.params import ParamTable
from .autodiff.tensor import Tensor


def add_linear(p: ParamTable, name: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
    p.weight(f"{name}.w", fan_in, fan_out)
    if bias:
        p.weight(f"{name}.b", fan_in, fan_out, shape=(fan_out,))


def apply_linear(p: ParamTable, name: str, x: Tensor) -> Tensor:
    b = f"{name}.b"
    return ops.linear(x, p[f"{name}.w"], p[b] if b in p else None)


def add_layer_norm(p: ParamTable, name: str, width: int) -> None:
    p.ones(f"{name}.g", (width,))
    p.zeros(f"{name}.b", (width,))


def apply_layer_norm(p: ParamTable, name: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    return ops.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], eps)


def add_mlp(p: ParamTable, name: str, widths: list[int]) -> None:
    """Linear layers ``name.0 .. name.{n-1}`` with ReLU between them."""
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        add_linear(p, f"{name}.{i}", a, b)


def apply_mlp(p: ParamTable, name: str, x: Tensor, n_layers: int) -> Tensor:
    for i in range(n_layers):
        x = apply_linear(p, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = ops.relu(x)
    return x
