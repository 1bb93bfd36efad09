"""Central finite-difference gradient checks re-evaluated in float64."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from core.tensor import Parameter, Tensor, no_grad, precision

H = 1e-3
REL_TOL = 1e-3
# gradients smaller than this are compared on an absolute scale
ABS_FLOOR = 1e-2


@dataclass
class GradCheckResult:
    checked: int
    failures: int
    max_rel_err: float

    @property
    def fraction_ok(self) -> float:
        return 1.0 - self.failures / self.checked if self.checked else 1.0


def relative_error(analytic: float, numeric: float, floor: float = ABS_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], h: float = H,
              max_per_param: Optional[int] = 32, seed: int = 0,
              reference_fn: Optional[Callable[[], Tensor]] = None) -> GradCheckResult:
    """Compare backward() of `loss_fn` with central differences of `reference_fn` (default: loss_fn).

    Parameters are promoted to float64 for the check and restored afterwards.
    """
    rng = np.random.default_rng(seed)
    reference_fn = reference_fn or loss_fn
    originals = [p.data for p in params]
    checked = failures = 0
    worst = 0.0
    try:
        with precision(np.float64):
            for p in params:
                p.data = p.data.astype(np.float64)
                p.grad = None
            loss_fn().backward()
            analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
            with no_grad():
                for p, grad in zip(params, analytic):
                    coords = list(np.ndindex(*p.shape))
                    if max_per_param is not None and len(coords) > max_per_param:
                        picks = rng.choice(len(coords), size=max_per_param, replace=False)
                        coords = [coords[i] for i in picks]
                    for idx in coords:
                        saved = p.data[idx]
                        p.data[idx] = saved + h
                        plus = reference_fn().item()
                        p.data[idx] = saved - h
                        minus = reference_fn().item()
                        p.data[idx] = saved
                        err = relative_error(float(grad[idx]), (plus - minus) / (2.0 * h))
                        worst = max(worst, err)
                        checked += 1
                        failures += int(err >= REL_TOL)
    finally:
        for p, data in zip(params, originals):
            p.data = data
            p.grad = None
    return GradCheckResult(checked=checked, failures=failures, max_rel_err=worst)
