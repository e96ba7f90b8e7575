from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from app.utils.exceptions import ShapeError


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """
    Accumulators of one optimizer over a fixed set of tensors.

    Adam keeps first and second moments; RMSprop keeps only the running mean
    square (in `second`). `step` counts applied updates.
    """

    kind: str
    learning_rate: float
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    epsilon: float = 1e-8

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.second)


def adam_state(shapes: Iterable[Tuple[str, tuple]], learning_rate: float, beta1: float = 0.9,
               beta2: float = 0.999, epsilon: float = 1e-8) -> OptimizerState:
    shapes = list(shapes)
    return OptimizerState(
        kind="adam",
        learning_rate=learning_rate,
        first={name: np.zeros(shape) for name, shape in shapes},
        second={name: np.zeros(shape) for name, shape in shapes},
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def rmsprop_state(shapes: Iterable[Tuple[str, tuple]], learning_rate: float, decay: float = 0.9,
                  epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        kind="rmsprop",
        learning_rate=learning_rate,
        second={name: np.zeros(shape) for name, shape in shapes},
        decay=decay,
        epsilon=epsilon,
    )


def _owned(state: OptimizerState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]):
    for name in state.second:
        if name not in grads:
            continue
        if params[name].shape != grads[name].shape or grads[name].shape != state.second[name].shape:
            raise ShapeError(f"optimizer shapes differ for '{name}': param {params[name].shape}, grad {grads[name].shape}")
        yield name


def adam_step(state: OptimizerState, params: Mapping[str, np.ndarray],
              grads: Mapping[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One bias-corrected Adam ascent step.

    Only tensors the state owns and `grads` mentions are updated. Inputs are not
    modified.

    Returns:
        (updated tensors by name, new state)
    """
    t = state.step + 1
    first, second, updated = dict(state.first), dict(state.second), {}
    for name in _owned(state, params, grads):
        g = grads[name]
        first[name] = state.beta1 * state.first[name] + (1.0 - state.beta1) * g
        second[name] = state.beta2 * state.second[name] + (1.0 - state.beta2) * g * g
        m_hat = first[name] / (1.0 - state.beta1 ** t)
        v_hat = second[name] / (1.0 - state.beta2 ** t)
        updated[name] = params[name] + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return updated, replace(state, first=first, second=second, step=t)


def rmsprop_step(state: OptimizerState, params: Mapping[str, np.ndarray],
                 grads: Mapping[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One RMSprop ascent step: s <- rho * s + (1 - rho) * g^2, theta <- theta + lr * g / (sqrt(s) + eps)."""
    second, updated = dict(state.second), {}
    for name in _owned(state, params, grads):
        g = grads[name]
        second[name] = state.decay * state.second[name] + (1.0 - state.decay) * g * g
        updated[name] = params[name] + state.learning_rate * g / (np.sqrt(second[name]) + state.epsilon)
    return updated, replace(state, second=second, step=state.step + 1)
