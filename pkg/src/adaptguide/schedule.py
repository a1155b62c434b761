"""Beta-shaped temporal modulation of guidance strength, plus the SNR signal."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import beta as beta_dist

from .exceptions import DomainError
from .experts import EXPERTS, ExpertId

SHAPE_BOUNDS = (0.5, 10.0)
# interior grid used to normalise shapes that have no interior mode
_GRID = np.linspace(1e-4, 1.0 - 1e-4, 4096)


@dataclass(frozen=True)
class GuidanceParams:
    alpha: float = 2.0
    beta: float = 2.0
    lambda_peak: float = 5.0
    lambda_base: dict = field(
        default_factory=lambda: {
            ExpertId.VDW.value: 0.5,
            ExpertId.RECOGNITION.value: 2.0,
            ExpertId.ENERGY.value: 1.0,
            ExpertId.INTERFACE.value: 1.0,
        }
    )
    bounds: tuple = SHAPE_BOUNDS

    def __post_init__(self):
        lo, hi = self.bounds
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise DomainError(f"{name}={v} outside [{lo}, {hi}]")
        if not self.lambda_peak > 0:
            raise DomainError("lambda_peak must be positive")
        base = {ExpertId(k).value: float(v) for k, v in self.lambda_base.items()}
        if any(v < 0 for v in base.values()):
            raise DomainError("base strengths must be nonnegative")
        object.__setattr__(self, "lambda_base", base)

    def base(self, expert_id):
        return self.lambda_base.get(ExpertId(expert_id).value, 0.0)

    def with_shape(self, alpha, beta):
        return replace(self, alpha=float(alpha), beta=float(beta))


def beta_mode(alpha, beta):
    """Interior mode of Beta(alpha, beta), or None when it does not exist."""
    if alpha > 1 and beta > 1:
        return (alpha - 1.0) / (alpha + beta - 2.0)
    return None


def _check_shape(alpha, beta):
    if not (alpha > 0 and beta > 0):
        raise DomainError(f"Beta shapes must be positive, got ({alpha}, {beta})")


def profile_normalizer(alpha, beta):
    """Density value that maps to the peak factor."""
    _check_shape(alpha, beta)
    mode = beta_mode(alpha, beta)
    if mode is not None:
        return float(beta_dist.pdf(mode, alpha, beta))
    return float(np.max(beta_dist.pdf(_GRID, alpha, beta)))


def beta_profile(t_norm, alpha, beta, lambda_peak=5.0):
    """Beta density at ``t_norm`` scaled so the peak equals ``lambda_peak``."""
    _check_shape(alpha, beta)
    t_norm = np.asarray(t_norm, dtype=float)
    if beta_mode(alpha, beta) is None:
        t_norm = np.clip(t_norm, _GRID[0], _GRID[-1])
    out = beta_dist.pdf(t_norm, alpha, beta) / profile_normalizer(alpha, beta) * lambda_peak
    return float(out) if out.ndim == 0 else out


def normalized_time(t, T):
    if T < 2:
        raise DomainError("at least two steps are needed to normalise time")
    if not 1 <= t <= T:
        raise DomainError(f"step {t} outside [1, {T}]")
    return (t - 1.0) / (T - 1.0)


def generation_step(t_diffusion, T):
    """Generation-order index of a diffusion timestep (t = T is generated first)."""
    return T - t_diffusion + 1


def temporal_factor(t, T, alpha, beta, lambda_peak=5.0):
    """Temporal multiplier at generation step ``t`` of ``T``."""
    return beta_profile(normalized_time(t, T), alpha, beta, lambda_peak)


def guidance_strength(expert_id, t, T, params, w):
    """Base strength x temporal factor x routing weight for one expert."""
    if not 0.0 <= w <= 1.0:
        raise DomainError(f"routing weight {w} outside [0, 1]")
    f = temporal_factor(t, T, params.alpha, params.beta, params.lambda_peak)
    return params.base(expert_id) * f * w


def strengths(t, T, params):
    """Per-expert ``lambda_base * f_temporal`` at generation step ``t``."""
    f = temporal_factor(t, T, params.alpha, params.beta, params.lambda_peak)
    return {e: params.base(e) * f for e in EXPERTS}


def snr(t, schedule):
    """``alpha_bar / (1 - alpha_bar)``; ``math.inf`` at a noiseless step."""
    ab = float(schedule.alpha_bar[t])
    if ab >= 1.0:
        return math.inf
    return ab / (1.0 - ab)
