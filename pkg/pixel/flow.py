"""Conditional flow matching on the linear noise-to-data path and Euler sampling."""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from core.nn import MLP, Module, sinusoid_features
from core.ops import mse_loss
from core.optim import TrainState
from core.tensor import Tensor, no_grad
from utils.errors import ContractError, DimensionError
from utils.logger import log_component_call, setup_logger

logger = setup_logger(__name__)

VelocityField = Callable[[np.ndarray, np.ndarray, Optional[np.ndarray]], object]


@dataclass(frozen=True)
class FlowSample:
    """x0 noise, x1 data, t per leading item; x_t and v_target are derived."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float32)
        x1 = np.asarray(self.x1, dtype=np.float32)
        t = np.asarray(self.t, dtype=np.float32).reshape(-1)
        if x0.shape != x1.shape:
            raise DimensionError(f"noise {x0.shape} and data {x1.shape} differ in shape")
        if t.shape[0] != x1.shape[0]:
            raise DimensionError(f"{t.shape[0]} timesteps for a batch of {x1.shape[0]}")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ContractError("flow timesteps must lie in [0, 1]")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "t", t)

    @property
    def _t(self) -> np.ndarray:
        return self.t.reshape((-1,) + (1,) * (self.x1.ndim - 1))

    @property
    def x_t(self) -> np.ndarray:
        return ((1.0 - self._t) * self.x0 + self._t * self.x1).astype(np.float32)

    @property
    def v_target(self) -> np.ndarray:
        return (self.x1 - self.x0).astype(np.float32)

    @classmethod
    def draw(cls, x1: np.ndarray, rng: np.random.Generator) -> "FlowSample":
        x1 = np.asarray(x1, dtype=np.float32)
        t = rng.uniform(0.0, 1.0, size=x1.shape[0])
        x0 = rng.standard_normal(x1.shape)
        return cls(x0=x0, x1=x1, t=t)


def _as_array(velocity) -> np.ndarray:
    return velocity.data if isinstance(velocity, Tensor) else np.asarray(velocity, dtype=np.float32)


def flow_matching_loss(sample: FlowSample, cond: Optional[np.ndarray], model: VelocityField) -> Tensor:
    """Mean squared velocity error per coordinate for a fixed draw."""
    prediction = model(sample.x_t, sample.t, cond)
    if not isinstance(prediction, Tensor):
        prediction = Tensor(prediction)
    return mse_loss(prediction, Tensor(sample.v_target))


def cfm_loss(x1: np.ndarray, cond: Optional[np.ndarray], model: VelocityField,
             rng: np.random.Generator) -> Tensor:
    """t ~ U(0,1), x0 ~ N(0,I); regress the model onto x1 - x0 at x_t."""
    return flow_matching_loss(FlowSample.draw(x1, rng), cond, model)


def euler_integrate(x0: np.ndarray, model: VelocityField, steps: int,
                    cond: Optional[np.ndarray] = None) -> np.ndarray:
    """x <- x + v(x, i/N) / N for i in 0..N-1."""
    if steps < 1:
        raise ContractError(f"Euler integration needs at least one step, got {steps}")
    x = np.asarray(x0, dtype=np.float32).copy()
    dt = np.float32(1.0 / steps)
    with no_grad():
        for i in range(steps):
            t = np.full(x.shape[0], i / steps, dtype=np.float32)
            x = x + dt * _as_array(model(x, t, cond))
    return x


def euler_sample(cond: Optional[np.ndarray], model: VelocityField, steps: int, shape: Tuple[int, ...],
                 rng: np.random.Generator) -> np.ndarray:
    """Integrate from Gaussian noise of `shape`, then clamp to [-1, 1]."""
    x0 = rng.standard_normal(shape).astype(np.float32)
    return np.clip(euler_integrate(x0, model, steps, cond), -1.0, 1.0)


class VelocityMLP(Module):
    """Unconditional field for low-dimensional points: [x, sinusoid(t)] -> velocity."""

    def __init__(self, dim: int = 2, hidden: int = 128, time_features: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.time_features = time_features
        self.mlp = MLP(dim + time_features, hidden, dim, rng)

    def forward(self, x: np.ndarray, t: np.ndarray, cond: Optional[np.ndarray] = None) -> Tensor:
        features = sinusoid_features(np.asarray(t), self.time_features, max_period=100.0)
        return self.mlp(Tensor(np.concatenate([np.asarray(x, dtype=np.float32), features], axis=-1)))


class GaussianMixture:
    """Isotropic Gaussian modes in the plane."""

    def __init__(self, means: np.ndarray, std: float = 0.25, weights: Optional[np.ndarray] = None):
        self.means = np.asarray(means, dtype=np.float32)
        self.std = std
        k = len(self.means)
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)

    @classmethod
    def two_modes(cls, separation: float = 4.0, std: float = 0.25) -> "GaussianMixture":
        half = separation / 2.0
        return cls(np.array([[-half, 0.0], [half, 0.0]]), std=std)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        modes = rng.choice(len(self.means), size=n, p=self.weights)
        return (self.means[modes] + self.std * rng.standard_normal((n, self.means.shape[1]))).astype(np.float32)

    def assign(self, points: np.ndarray) -> np.ndarray:
        distances = ((points[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(distances, axis=1)

    def summarize(self, points: np.ndarray) -> Dict[str, list]:
        """Empirical mean and weight of the points nearest each mode."""
        labels = self.assign(points)
        means, weights = [], []
        for k in range(len(self.means)):
            members = points[labels == k]
            means.append(members.mean(axis=0).tolist() if len(members) else [float("nan")] * points.shape[1])
            weights.append(float(len(members) / max(len(points), 1)))
        return {"means": means, "weights": weights}


def train_velocity_field(field: Module, data: GaussianMixture, steps: int = 2000, batch_size: int = 256,
                         lr: float = 2e-3, seed: int = 0) -> float:
    """Fit an unconditional field to the mixture with cfm_loss; returns the final loss."""
    rng = np.random.default_rng(seed)
    state = TrainState({"field": list(field.named_parameters("field."))}, lr=lr)
    loss_value = float("nan")
    for step in range(1, steps + 1):
        loss = cfm_loss(data.sample(batch_size, rng), None, field, rng)
        loss_value = loss.item()
        state.step(loss)
        if step % 500 == 0:
            log_component_call(logger, "VelocityMLP", f"step {step}/{steps}", {"loss": round(loss_value, 5)})
    return loss_value
