"""Flow-matching transformer over [conditioning tokens | noisy patches] with optional weight sharing.

Each block is modulated by nine vectors: shift, scale and gate for the
attention and MLP sublayers on patch tokens, and one shift, scale and gate
triple for the conditioning tokens. The vectors are a per-block table plus a
shared projection of the timestep embedding; both start at zero so every
block starts as the identity.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from core.nn import MLP, Linear, Module, MultiHeadAttention, RMSNorm, sinusoid_features
from core.ops import gelu, rmsnorm
from core.tensor import Parameter, Tensor, add, concat, mul, reshape
from pixel.patches import unpatchify
from utils.config import DiTConfig
from utils.errors import ContractError, DimensionError
from utils.logger import setup_logger

logger = setup_logger(__name__)

TIME_FEATURES = 64
MODULATION_VECTORS = 9
(ATTN_SHIFT, ATTN_SCALE, ATTN_GATE,
 MLP_SHIFT, MLP_SCALE, MLP_GATE,
 COND_SHIFT, COND_SCALE, COND_GATE) = range(MODULATION_VECTORS)


def timestep_features(t: np.ndarray) -> np.ndarray:
    """64 sinusoid features; cosines first."""
    return sinusoid_features(np.asarray(t, dtype=np.float32), TIME_FEATURES)


class TimestepEmbedder(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        self.mlp = MLP(TIME_FEATURES, d, d, rng)

    def forward(self, t: np.ndarray) -> Tensor:
        return self.mlp(Tensor(timestep_features(t)))


class BlockWeights(Module):
    """Attention and MLP weights of one transformer block, without norms or modulation."""

    def __init__(self, d: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.mlp = MLP(d, mlp_ratio * d, d, rng)


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return add(mul(x, add(scale, 1.0)), shift)


class DiT(Module):
    def __init__(self, config: DiTConfig, cond_dim: int, cond_tokens: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.cond_dim = cond_dim
        self.cond_tokens = cond_tokens
        d = config.d
        self.patch_embed = Linear(config.patch_dim, d, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(config.num_patches, d)))
        self.cond_proj = Linear(cond_dim, d, rng)
        self.cond_pos = Parameter(rng.normal(0.0, 0.02, size=(cond_tokens, d)))
        self.time = TimestepEmbedder(d, rng)
        count = 1 if config.share_weights else config.depth
        self.blocks = [BlockWeights(d, config.heads, config.mlp_ratio, rng) for _ in range(count)]
        self.modulation = Parameter(np.zeros((config.depth, MODULATION_VECTORS, d), dtype=np.float32))
        self.ada = Linear(d, MODULATION_VECTORS * d, rng, zero_init=True)
        self.norm = RMSNorm(d)
        self.out = Linear(d, config.patch_dim, rng, zero_init=True)
        self.name = "DiT"
        logger.info(f"DiT initialized: {config.resolution}px, depth {config.depth}, "
                    f"shared={config.share_weights}, {self.num_parameters()} parameters")

    def block_weights(self, layer: int) -> BlockWeights:
        return self.blocks[0] if self.config.share_weights else self.blocks[layer]

    def block_parameter_count(self) -> int:
        """Attention/MLP weights plus per-block modulation vectors."""
        return sum(b.num_parameters() for b in self.blocks) + self.modulation.size

    def timestep_embed(self, t: np.ndarray) -> Tensor:
        return self.time(np.asarray(t, dtype=np.float32).reshape(-1))

    def block_forward(self, layer: int, x: Tensor, mod: Tensor) -> Tensor:
        """One modulated block over the joint (B, G2 + N, d) sequence."""
        weights = self.block_weights(layer)
        m = add(mod, self.modulation[layer])
        vec = [m[:, j:j + 1, :] for j in range(MODULATION_VECTORS)]
        g = self.cond_tokens

        h = rmsnorm(x)
        h = concat([modulate(h[:, :g], vec[COND_SHIFT], vec[COND_SCALE]),
                    modulate(h[:, g:], vec[ATTN_SHIFT], vec[ATTN_SCALE])], axis=1)
        a = weights.attn(h)
        x = add(x, concat([mul(a[:, :g], vec[COND_GATE]), mul(a[:, g:], vec[ATTN_GATE])], axis=1))

        h = rmsnorm(x)
        h = concat([modulate(h[:, :g], vec[COND_SHIFT], vec[COND_SCALE]),
                    modulate(h[:, g:], vec[MLP_SHIFT], vec[MLP_SCALE])], axis=1)
        f = weights.mlp(h)
        return add(x, concat([mul(f[:, :g], vec[COND_GATE]), mul(f[:, g:], vec[MLP_GATE])], axis=1))

    def modulation_input(self, t: np.ndarray) -> Tensor:
        """(B, 9, d) timestep-driven part of the modulation, shared by every block.

        One projection serves all blocks so the timestep path has the same size
        whether or not block weights are shared; blocks differ only through
        their rows of `self.modulation`.
        """
        temb = self.timestep_embed(t)
        return reshape(self.ada(gelu(temb)), (temb.shape[0], MODULATION_VECTORS, self.config.d))

    def forward(self, x_t: np.ndarray, t: np.ndarray, cond: np.ndarray) -> Tensor:
        """Velocity for patch tokens (B, N, patch_dim) given conditioning (B, G2, cond_dim)."""
        x_t = np.asarray(x_t, dtype=np.float32)
        cond = np.asarray(cond, dtype=np.float32)
        b, n, p = x_t.shape
        if n != self.config.num_patches or p != self.config.patch_dim:
            raise DimensionError(f"expected (B, {self.config.num_patches}, {self.config.patch_dim}) patches, "
                                 f"got {x_t.shape}")
        if cond.shape != (b, self.cond_tokens, self.cond_dim):
            raise DimensionError(f"expected conditioning {(b, self.cond_tokens, self.cond_dim)}, got {cond.shape}")
        patches = add(self.patch_embed(Tensor(x_t)), self.pos)
        tokens = add(self.cond_proj(Tensor(cond)), self.cond_pos)
        x = concat([tokens, patches], axis=1)
        mod = self.modulation_input(t)
        for layer in range(self.config.depth):
            x = self.block_forward(layer, x, mod)
        return self.out(self.norm(x[:, self.cond_tokens:]))

    def to_image(self, tokens: np.ndarray) -> np.ndarray:
        return unpatchify(tokens, self.config.patch_size)

    def parameter_groups(self) -> Dict[str, List[Tuple[str, Parameter]]]:
        return {"dit": list(self.named_parameters("dit."))}

    def shared_weights_state(self) -> Dict[str, np.ndarray]:
        return {name: value for name, value in self.state_dict().items() if name.startswith("blocks.")}


def dit_forward(x_t: np.ndarray, t: np.ndarray, cond: np.ndarray, model: DiT) -> Tensor:
    return model(x_t, t, cond)


def grow_resolution(model: DiT, resolution: int, seed: int = 0) -> DiT:
    """Copy of `model` at a new resolution; patch positions are re-initialized for the new length."""
    if resolution % model.config.patch_size:
        raise ContractError(f"resolution {resolution} is not divisible by patch size {model.config.patch_size}")
    grown = DiT(model.config.model_copy(update={"resolution": resolution}), model.cond_dim,
                model.cond_tokens, seed=seed)
    state = {name: value for name, value in model.state_dict().items() if name != "pos"}
    missing = grown.load_state_dict(state, strict=False)
    if missing != ["pos"]:
        raise ContractError(f"unexpected parameters left uninitialized when growing: {missing}")
    return grown


def count_block_parameters(config: DiTConfig, cond_dim: int, cond_tokens: int, share: Optional[bool] = None) -> int:
    if share is not None:
        config = config.model_copy(update={"share_weights": share})
    return DiT(config, cond_dim, cond_tokens).block_parameter_count()
