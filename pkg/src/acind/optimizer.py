"""Optimizer - handles bias-corrected Adam with separate MLP and AC learning rates"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ValidationError
from .grids import AcVector
from .inr import PHI, MlpParams


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name"""

    lr_mlp: float
    lr_phi: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr_mlp < 0 or self.lr_phi < 0:
            raise ValidationError(f"learning rates must be non-negative, got {self.lr_mlp}, {self.lr_phi}")
        if self.step < 0:
            raise ValidationError(f"step must be >= 0, got {self.step}")

    def learning_rate(self, name: str) -> float:
        return self.lr_phi if name == PHI else self.lr_mlp


def adam_update(
    arrays: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam step over named arrays; returns new arrays and a new state"""
    if set(grads) != set(arrays):
        raise ValidationError(f"gradient names {sorted(grads)} do not match parameters {sorted(arrays)}")
    step = state.step + 1
    bias1 = 1.0 - state.beta1**step
    bias2 = 1.0 - state.beta2**step
    updated, first, second = {}, {}, {}
    for name, value in arrays.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise ValidationError(f"gradient for {name} has shape {grad.shape}, expected {value.shape}")
        m = state.first_moments.get(name, np.zeros_like(value))
        v = state.second_moments.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        updated[name] = value - state.learning_rate(name) * m_hat / (np.sqrt(v_hat) + state.eps)
        first[name], second[name] = m, v
    return updated, replace(state, step=step, first_moments=first, second_moments=second)


def adam_step(
    params: MlpParams, phi: Optional[AcVector], grads: Dict[str, np.ndarray], state: AdamState
) -> Tuple[MlpParams, Optional[AcVector], AdamState]:
    """Adam step on the MLP weights and, when present, the AC vector"""
    arrays = params.named_arrays()
    if phi is not None:
        arrays[PHI] = phi.values
    updated, state = adam_update(arrays, grads, state)
    new_phi = AcVector(updated.pop(PHI)) if phi is not None else None
    return params.with_arrays(updated), new_phi, state
