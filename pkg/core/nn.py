"""Neural network building blocks: modules, layers and transformer blocks."""

import hashlib
from typing import Dict, Iterable, Iterator, List, Tuple

import numpy as np

from core.ops import attention, gelu, rmsnorm
from core.tensor import Parameter, Tensor, add, concat, matmul, reshape, take_rows, transpose
from utils.errors import ContractError, DimensionError


class Module:
    """Base class; parameters are discovered by scanning attributes in definition order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            for name, param in _walk(value, f"{prefix}{attr}"):
                if id(param) in seen:
                    continue
                seen.add(id(param))
                yield name, param

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> List[str]:
        """Copy matching arrays into parameters; returns the names that were not found."""
        missing = []
        for name, param in self.named_parameters():
            if name not in state:
                missing.append(name)
                continue
            value = np.asarray(state[name], dtype=np.float32)
            if value.shape != param.shape:
                raise DimensionError(f"parameter {name}: checkpoint shape {value.shape} != model shape {param.shape}")
            param.data = value.copy()
        if strict and missing:
            raise ContractError(f"state dict is missing parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        return missing


def _walk(value, name: str) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    """y = x W + b with W stored as (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False):
        if zero_init:
            weight = np.zeros((in_features, out_features), dtype=np.float32)
        else:
            weight = rng.normal(0.0, 1.0 / np.sqrt(in_features), size=(in_features, out_features))
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Linear expects {self.in_features} input features, got {x.shape[-1]}")
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = Parameter(rng.normal(0.0, std, size=(num_embeddings, dim)))
        self.num_embeddings = num_embeddings
        self.dim = dim

    def forward(self, ids: np.ndarray) -> Tensor:
        return take_rows(self.weight, ids)


class RMSNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return rmsnorm(x, self.gain)


class MLP(Module):
    """Two linear layers with a GELU between them."""

    def __init__(self, in_features: int, hidden: int, out_features: int, rng: np.random.Generator,
                 zero_out: bool = False):
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng, zero_init=zero_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d/heads)."""
    *lead, n, d = x.shape
    x = reshape(x, tuple(lead) + (n, heads, d // heads))
    k = len(lead)
    return transpose(x, list(range(k)) + [k + 1, k, k + 2])


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, dh = x.shape
    k = len(lead)
    x = transpose(x, list(range(k)) + [k + 1, k, k + 2])
    return reshape(x, tuple(lead) + (n, heads * dh))


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, causal: bool = False):
        if dim % heads:
            raise DimensionError(f"width {dim} not divisible by {heads} heads")
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.dim = dim
        self.heads = heads
        self.causal = causal

    def forward(self, x: Tensor) -> Tensor:
        qkv = self.qkv(x)
        d = self.dim
        q = split_heads(qkv[..., 0:d], self.heads)
        k = split_heads(qkv[..., d:2 * d], self.heads)
        v = split_heads(qkv[..., 2 * d:3 * d], self.heads)
        return self.proj(merge_heads(attention(q, k, v, causal=self.causal)))


class Block(Module):
    """Pre-norm transformer block: x + attn(norm(x)), then x + mlp(norm(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4, causal: bool = False):
        self.norm1 = RMSNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, causal=causal)
        self.norm2 = RMSNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = add(x, self.attn(self.norm1(x)))
        return add(x, self.mlp(self.norm2(x)))


def stack_rows(rows: List[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    return concat([reshape(r, (1,) + r.shape) for r in rows], axis=0)


def sinusoid_features(values: np.ndarray, dim: int, max_period: float = 1e4) -> np.ndarray:
    """cos then sin features at dim/2 frequencies geometric from 1 to max_period."""
    half = dim // 2
    freqs = np.geomspace(1.0, max_period, half)
    angles = np.asarray(values, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.cos(angles), np.sin(angles)], axis=-1).astype(np.float32)


def module_hash(module: Module) -> str:
    return hash_parameters(module.named_parameters())


def hash_parameters(named: Iterable[Tuple[str, Parameter]]) -> str:
    """SHA-256 over parameter names and little-endian bytes."""
    digest = hashlib.sha256()
    for name, param in named:
        digest.update(name.encode("utf-8"))
        digest.update(param.data.astype("<f4").tobytes())
    return digest.hexdigest()

