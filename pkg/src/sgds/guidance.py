"""Composed guidance score.

The sampler's effective score is an affine combination of three
probability scores (unconditional, context-conditional, fully conditional)
minus a weighted surprise gradient:

    (1 - w_ctx) * s_uncond + (w_ctx - w_txt) * s_ctx + w_txt * s_full
        - w_s * grad_surprise

Zero coefficients short-circuit: the corresponding term is never touched,
which makes the (1, 1, 0) reduction to s_full bit-exact and lets callers
skip computing branches entirely.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GuidanceWeights:
    omega_ctx: float
    omega_txt: float
    omega_s: float

    def __post_init__(self):
        for name in ("omega_ctx", "omega_txt", "omega_s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.omega_s < 0:
            raise ValueError("omega_s must be >= 0")


@dataclass(frozen=True)
class ScoreTerms:
    """Score vectors entering the composition.

    A term may be None when its coefficient is zero (it is then never
    read); grad_surprise is required exactly when omega_s > 0.
    """

    s_uncond: np.ndarray | None
    s_ctx: np.ndarray | None
    s_full: np.ndarray | None
    grad_surprise: np.ndarray | None = None


def coefficients(weights: GuidanceWeights) -> tuple[float, float, float, float]:
    """(c_uncond, c_ctx, c_full, c_surprise); the first three sum to 1."""
    return (
        1.0 - weights.omega_ctx,
        weights.omega_ctx - weights.omega_txt,
        weights.omega_txt,
        -weights.omega_s,
    )


def compose_score(terms: ScoreTerms, weights: GuidanceWeights) -> np.ndarray:
    c_u, c_c, c_f, c_s = coefficients(weights)
    parts = [
        (c_u, terms.s_uncond, "s_uncond"),
        (c_c, terms.s_ctx, "s_ctx"),
        (c_f, terms.s_full, "s_full"),
        (c_s, terms.grad_surprise, "grad_surprise"),
    ]
    result = None
    shape = None
    for coef, term, name in parts:
        if coef == 0.0:
            continue
        if term is None:
            raise ValueError(f"{name} required: its coefficient {coef} is nonzero")
        term = np.asarray(term, dtype=np.float64)
        if shape is None:
            shape = term.shape
        elif term.shape != shape:
            raise ValueError(
                f"{name} has shape {term.shape}, other terms have {shape}"
            )
        result = coef * term if result is None else result + coef * term
    if result is None:
        # all four coefficients vanish only for w = (1, 0, 0) minus ... never:
        # c_u + c_c + c_f = 1, so at least one probability term contributes
        raise AssertionError("unreachable: probability coefficients sum to 1")
    return result
