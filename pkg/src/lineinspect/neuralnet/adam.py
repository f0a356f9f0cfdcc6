"""Adam optimizer with bias correction; one state per parameter tensor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ValidationError


@dataclass
class AdamParams:
    """Hyperparameters; beta1 is the momentum coefficient, beta2 fixed-default 0.999."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError(f"betas must lie in [0, 1): {self}")
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise ValidationError(f"lr and eps must be positive: {self}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def init(cls, shape: tuple[int, ...], params: AdamParams) -> "AdamState":
        return cls(
            m=np.zeros(shape),
            v=np.zeros(shape),
            t=0,
            lr=params.lr,
            beta1=params.beta1,
            beta2=params.beta2,
            eps=params.eps,
        )


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; mutates and returns state."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError(
            f"shape mismatch params {params.shape} grads {grads.shape} m {state.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise ValidationError("non-finite gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, state


@dataclass
class AdamOptimizer:
    """Applies adam_step across a named parameter dict."""

    hyper: AdamParams
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if name not in self.states:
                self.states[name] = AdamState.init(params[name].shape, self.hyper)
            params[name], _ = adam_step(params[name], g, self.states[name])
