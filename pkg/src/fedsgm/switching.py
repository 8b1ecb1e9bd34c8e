"""Hard and soft rules for choosing between objective and constraint steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SwitchMode:
    mode: str
    epsilon: float
    beta: float | None = None

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"switch mode must be 'hard' or 'soft', got {self.mode!r}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.mode == "soft" and not (self.beta is not None and math.isfinite(self.beta) and self.beta > 0):
            raise ValueError("soft switching needs a finite beta > 0")

    @classmethod
    def hard(cls, epsilon: float) -> "SwitchMode":
        return cls("hard", float(epsilon))

    @classmethod
    def soft(cls, epsilon: float, beta: float) -> "SwitchMode":
        return cls("soft", float(epsilon), float(beta))

    def in_feasible_set(self, g_hat: float) -> bool:
        # hard rounds count toward A when g_hat <= eps, soft rounds when g_hat < eps
        return g_hat <= self.epsilon if self.mode == "hard" else g_hat < self.epsilon


def sigma_beta(x: float, beta: float) -> float:
    """Trimmed hinge min(1, max(0, 1 + beta x))."""
    return min(1.0, max(0.0, 1.0 + beta * x))


def switch_weight(mode: SwitchMode, g_hat: float) -> float:
    """Weight placed on the constraint subgradient this round."""
    if mode.mode == "hard":
        return 1.0 if g_hat > mode.epsilon else 0.0
    return sigma_beta(g_hat - mode.epsilon, mode.beta)


def blended_subgrad(weight: float, grad_f: np.ndarray, grad_g: np.ndarray) -> np.ndarray:
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"switch weight must lie in [0, 1], got {weight}")
    if weight == 0.0:
        return grad_f
    if weight == 1.0:
        return grad_g
    return (1.0 - weight) * grad_f + weight * grad_g
