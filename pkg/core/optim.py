"""AdamW optimizer with decoupled weight decay and gradient-norm clipping."""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.ops import check_finite
from core.nn import hash_parameters
from core.tensor import Parameter, Tensor
from utils.errors import ContractError, DimensionError
from utils.logger import setup_logger

logger = setup_logger(__name__)


class AdamW:
    """AdamW with bias correction; grads are zeroed after every step."""

    def __init__(self, named_params: Sequence[Tuple[str, Parameter]], lr: float = 3e-4,
                 betas: Tuple[float, float] = (0.9, 0.95), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: List[Tuple[str, Parameter]] = list(named_params)
        names = [name for name, _ in self.params]
        if len(set(names)) != len(names):
            raise ContractError("optimizer parameter names must be unique")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params}

    def names(self) -> List[str]:
        return [name for name, _ in self.params]

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"parameter {name} has no gradient; run backward() before step()")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            update = mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(np.float32)
            check_finite(p.data, f"AdamW update of {name}")
            p.grad.fill(0.0)

    def ensure_grads(self) -> None:
        """Give every parameter a zero gradient buffer if backward did not reach it."""
        for _, p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self.params:
            if p.grad is not None:
                p.grad.fill(0.0)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"step": np.array([self.step_count], dtype=np.int64)}
        for name, _ in self.params:
            state[f"m.{name}"] = self.m[name].copy()
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if "step" not in state:
            logger.warning("Optimizer state has no step counter; starting from a fresh state")
            return
        self.step_count = int(state["step"][0])
        for name, p in self.params:
            for prefix, buffers in (("m", self.m), ("v", self.v)):
                key = f"{prefix}.{name}"
                if key not in state:
                    raise ContractError(f"optimizer state lacks {key}")
                if state[key].shape != p.shape:
                    raise DimensionError(f"optimizer buffer {key} shape {state[key].shape} != {p.shape}")
                buffers[name] = np.asarray(state[key], dtype=np.float32).copy()


def adamw_step(optimizer: AdamW) -> None:
    optimizer.step()


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    check_finite(np.asarray(total), "gradient norm")
    if max_norm > 0 and total > max_norm:
        factor = np.float32(max_norm / (total + 1e-6))
        for g in grads:
            g *= factor
    return total


def grad_norm(params: Sequence[Parameter]) -> Optional[float]:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return None
    return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))


class TrainState:
    """Trainable/frozen split over named parameter groups plus the optimizer.

    Frozen parameters get requires_grad=False and never enter the optimizer.
    """

    def __init__(self, groups: Dict[str, List[Tuple[str, Parameter]]], freeze: Sequence[str] = (),
                 lr: float = 3e-4, weight_decay: float = 0.0, grad_clip: float = 1.0):
        unknown = sorted(set(freeze) - set(groups))
        if unknown:
            logger.warning(f"Freeze set names groups absent from this stage: {unknown}")
        self.groups = groups
        self.freeze = [g for g in freeze if g in groups]
        for group, params in groups.items():
            for _, p in params:
                p.requires_grad = group not in self.freeze
                p.grad = None
        self.trainable = [(n, p) for g, params in groups.items() if g not in self.freeze for n, p in params]
        if not self.trainable:
            raise ContractError("every parameter group is frozen; nothing to train")
        self.grad_clip = grad_clip
        self.optimizer = AdamW(self.trainable, lr=lr, weight_decay=weight_decay)

    def frozen_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(n, p) for g in self.freeze for n, p in self.groups[g]]

    def frozen_hash(self) -> str:
        return hash_parameters(self.frozen_parameters())

    def step(self, loss: Tensor) -> float:
        """Backward, clip, AdamW update; returns the pre-clip gradient norm."""
        loss.backward()
        self.optimizer.ensure_grads()
        norm = clip_grad_norm([p for _, p in self.trainable], self.grad_clip)
        self.optimizer.step()
        return norm
