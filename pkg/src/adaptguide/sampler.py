"""Guided reverse diffusion with expert routing and skip-step acceleration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DomainError
from .experts import EXPERTS, ExpertConfig, ExpertId, evaluate_expert
from .routing import RouterConfig, compute_severities, route_weights
from .schedule import GuidanceParams, generation_step, strengths
from .se3 import (
    NoiseSchedule,
    diffusion_center,
    logmap,
    predict_x0,
    reverse_rotation_step,
)

SKIP_MODES = ("full", "uniform", "adaptive")


@dataclass(frozen=True)
class SamplerConfig:
    grad_clip: float = 2.0
    skip_mode: str = "full"
    skip_interval: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.grad_clip > 0:
            raise DomainError("grad_clip must be positive")
        if self.skip_mode not in SKIP_MODES:
            raise DomainError(f"unknown skip mode {self.skip_mode!r}")
        if self.skip_interval < 1:
            raise DomainError("skip interval must be >= 1")


@dataclass(frozen=True)
class SkipSchedule:
    steps: tuple
    mode: str = "full"

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 2 or steps[-1] != 0:
            raise ContractError("skip schedule must contain T and end at 0")
        if any(a <= b for a, b in zip(steps, steps[1:])):
            raise ContractError("skip schedule must be strictly decreasing")

    @property
    def n_evaluated(self):
        """Schedule points, counting the terminal t = 0."""
        return len(self.steps)

    def transitions(self):
        return list(zip(self.steps[:-1], self.steps[1:]))


def adaptive_interval(t, T):
    if t > 0.7 * T:
        return 2
    if t > 0.3 * T:
        return 5
    return 10


def make_skip_schedule(T, mode="full", s=None):
    if T < 2:
        raise DomainError("T must be >= 2")
    if mode == "full":
        return SkipSchedule(tuple(range(T, -1, -1)), "full")
    if mode == "uniform":
        if s is None or s < 1:
            raise DomainError("uniform skipping needs an interval s >= 1")
        if s >= T:
            return SkipSchedule((T, 0), "uniform")
        steps = list(range(T, 0, -s))
        return SkipSchedule(tuple(steps) + (0,), "uniform")
    if mode == "adaptive":
        steps = [T]
        while steps[-1] > 0:
            t = steps[-1]
            steps.append(max(0, t - adaptive_interval(t, T)))
        return SkipSchedule(tuple(steps), "adaptive")
    raise DomainError(f"unknown skip mode {mode!r}")


# ---------------------------------------------------------------------------
# denoisers
# ---------------------------------------------------------------------------

class AnalyticDenoiser:
    """Exact noise prediction for a Gaussian cloud around ``reference``.

    Stands in for a trained network. Translations of the data are modelled as
    ``N(reference, spread**2)`` per coordinate, whose posterior mean given
    ``x_t`` is available in closed form; ``spread = 0`` makes the clean
    estimate the reference itself. Rotations always point at the reference.
    """

    def __init__(self, reference, schedule, spread=0.0):
        if spread < 0:
            raise DomainError("spread must be >= 0")
        self.reference = reference
        self.schedule = schedule
        self.spread = spread

    def __call__(self, state, t):
        sch = self.schedule
        ab = sch.alpha_bar[t]
        c = diffusion_center(state)
        ref = self.reference.trans - c
        x = state.trans - c
        tau2 = (self.spread / sch.trans_scale) ** 2
        # posterior mean shrinks the noisy residual toward the prior in scaled units
        gain = np.sqrt(ab) * tau2 / (ab * tau2 + 1.0 - ab)
        x0 = ref + gain * (x - np.sqrt(ab) * ref)
        eps_trans = (x - np.sqrt(ab) * x0) / (sch.trans_scale * np.sqrt(1.0 - ab))
        rel = logmap(np.swapaxes(state.rots, -1, -2) @ self.reference.rots)
        eps_rot = -np.sqrt(ab) / np.sqrt(1.0 - ab) * rel
        return eps_trans, eps_rot


def _check_denoiser_output(out, n):
    try:
        eps_trans, eps_rot = out
    except (TypeError, ValueError) as exc:
        raise ContractError("denoiser must return (eps_trans, eps_rot)") from exc
    eps_trans = np.asarray(eps_trans, dtype=float)
    eps_rot = np.asarray(eps_rot, dtype=float)
    if eps_trans.shape != (n, 3) or eps_rot.shape != (n, 3):
        raise ContractError(
            f"denoiser output shapes {eps_trans.shape}, {eps_rot.shape} != ({n}, 3)"
        )
    if not (np.all(np.isfinite(eps_trans)) and np.all(np.isfinite(eps_rot))):
        raise ContractError("denoiser returned non-finite values")
    return eps_trans, eps_rot


def rng_noise(rng):
    """Default noise source: translation and rotation draws, in that order."""
    def draw(t, n):
        z = rng.standard_normal((n, 3))
        xi = rng.standard_normal((n, 3))
        return z, xi
    return draw


# ---------------------------------------------------------------------------
# guidance
# ---------------------------------------------------------------------------

def clip_per_residue(g, max_norm):
    norms = np.linalg.norm(g, axis=1)
    scale = np.minimum(1.0, max_norm / np.where(norms > 0, norms, 1.0))
    return g * scale[:, None]


def _guidance_field(state, weights, expert_strength, expert_cfg, grad_clip):
    """Weighted sum of expert gradients (clipped) plus per-expert losses."""
    g = np.zeros((state.n, 3))
    losses = {}
    for e in EXPERTS:
        coef = weights.get(e, 0.0) * expert_strength.get(e, 0.0)
        if coef == 0.0:
            continue
        res = evaluate_expert(e, state, expert_cfg)
        losses[e.value] = res.loss
        g = g + coef * res.grad
    return clip_per_residue(g, grad_clip), losses


def _as_weights(weights):
    if hasattr(weights, "w"):
        weights = weights.w
    return {ExpertId(k): float(v) for k, v in weights.items()}


def combined_gradient(state, weights, params, t, T, expert_cfg=None, grad_clip=2.0):
    """Routing-weighted, temporally-modulated sum of expert gradients.

    ``t`` is the diffusion timestep (``T`` noisiest); the result is clipped to
    ``grad_clip`` per residue.
    """
    expert_cfg = expert_cfg or ExpertConfig()
    lam = strengths(generation_step(t, T), T, params)
    g, _ = _guidance_field(state, _as_weights(weights), lam, expert_cfg, grad_clip)
    return g


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------

@dataclass
class GuidedSampler:
    """Reverse-diffusion sampler with routed physics guidance.

    Translations follow the DDPM posterior given the denoiser's clean
    estimate, shifted by the guidance field; rotations take score-driven
    steps toward the denoiser's rotation estimate. Target residues are frozen.
    """

    denoiser: object
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.cosine)
    params: GuidanceParams = field(default_factory=GuidanceParams)
    expert_cfg: ExpertConfig = field(default_factory=ExpertConfig)
    router_cfg: RouterConfig = field(default_factory=RouterConfig)
    cfg: SamplerConfig = field(default_factory=SamplerConfig)
    guidance: bool = True

    def get_params(self):
        return {
            "schedule": self.schedule, "params": self.params,
            "expert_cfg": self.expert_cfg, "router_cfg": self.router_cfg,
            "cfg": self.cfg, "guidance": self.guidance,
        }

    def route(self, state):
        sev = compute_severities(state, self.router_cfg, self.expert_cfg)
        return route_weights(sev, self.router_cfg.theta_min)

    def _interval_strengths(self, t, t_prev):
        T = self.schedule.T
        lam_t = strengths(generation_step(t, T), T, self.params)
        dt = t - t_prev
        if dt == 1:
            return lam_t
        lam_next = strengths(generation_step(max(t_prev, 1), T), T, self.params)
        # average of the linearly interpolated strength over t' = t, ..., t_prev + 1
        out = {}
        for e in EXPERTS:
            vals = [
                lam_t[e] + (tp - t) / (t_prev - t) * (lam_next[e] - lam_t[e])
                for tp in range(t, t_prev, -1)
            ]
            out[e] = float(np.mean(vals))
        return out

    def transition(self, state, t, t_prev, noise, report=None):
        """Move ``state`` from timestep ``t`` to ``t_prev`` (< t).

        Returns ``(new_state, report, record)``; ``report`` is the routing
        decision used and ``record`` a trace dict.
        """
        if not 0 <= t_prev < t <= self.schedule.T:
            raise DomainError(f"invalid transition {t} -> {t_prev}")
        sch = self.schedule
        n = state.n
        dt = t - t_prev
        mask = state.generated_mask

        record = {"t": int(t), "t_prev": int(t_prev), "dt": int(dt)}
        if self.guidance:
            if report is None:
                report = self.route(state)
            lam = self._interval_strengths(t, t_prev)
            g, losses = _guidance_field(state, report.w, lam, self.expert_cfg, self.cfg.grad_clip)
            g[~mask] = 0.0
            record.update(report.as_dict())
            record["strengths"] = {e.value: report.w[e] * lam[e] for e in EXPERTS}
            record["losses"] = losses
        else:
            g = np.zeros((n, 3))
        record["grad_norm_max"] = float(np.max(np.linalg.norm(g, axis=1))) if n else 0.0

        eps_trans, eps_rot = _check_denoiser_output(self.denoiser(state, t), n)
        z, xi = noise(t, n)

        ab_t = sch.alpha_bar[t]
        ab_p = sch.alpha_bar[t_prev]
        a_eff = ab_t / ab_p
        c = diffusion_center(state)
        x = state.trans - c
        mu = (x - (1.0 - a_eff) / np.sqrt(1.0 - ab_t) * sch.trans_scale * eps_trans) / np.sqrt(a_eff)
        var = (1.0 - ab_p) * (1.0 - a_eff) / (1.0 - ab_t)
        new_x = c + mu - np.sqrt(dt) * g + sch.trans_scale * np.sqrt(var * dt) * z

        rot0_hat = predict_x0(state, eps_trans, eps_rot, sch, t, center=c).rots
        # diffusion-time step, capped so the drift coefficient dt/(2 sigma^2) <= 1
        dt_rot = min(float(dt), 2.0 * sch.sigma[t] ** 2)
        new_rots = reverse_rotation_step(state.rots, rot0_hat, sch.sigma[t], dt_rot, xi=xi)

        trans = state.trans.copy()
        rots = state.rots.copy()
        trans[mask] = new_x[mask]
        rots[mask] = new_rots[mask]
        return state.with_coords(rots=rots, trans=trans, timestep=t_prev), report, record

    def step(self, state, rng=None, noise=None):
        """One full-resolution step ``t -> t - 1``."""
        t = state.timestep
        if t < 1:
            raise DomainError("cannot step below t = 0")
        noise = noise or rng_noise(rng)
        new, _, _ = self.transition(state, t, t - 1, noise)
        return new

    def sample(self, x_T, rng=None, skip=None, noise=None, trace=None):
        """Run the reverse process over ``skip`` (default: every step)."""
        if skip is None:
            cfg = self.cfg
            skip = make_skip_schedule(self.schedule.T, cfg.skip_mode, cfg.skip_interval)
        if x_T.timestep != skip.steps[0]:
            raise ContractError(
                f"start state is at t={x_T.timestep}, schedule starts at {skip.steps[0]}"
            )
        if self.guidance:
            x_T.require_guidance_regions()
        noise = noise or rng_noise(rng)
        state = x_T
        report = None
        for k, (t, t_prev) in enumerate(skip.transitions()):
            if k % self.router_cfg.stride == 0:
                report = None
            state, report, record = self.transition(state, t, t_prev, noise, report)
            if trace is not None:
                trace.append(record)
        return state


def guided_step(state, denoiser, schedule, params, cfg, rng, expert_cfg=None, router_cfg=None):
    sampler = GuidedSampler(
        denoiser, schedule, params, expert_cfg or ExpertConfig(),
        router_cfg or RouterConfig(), cfg,
    )
    return sampler.step(state, rng)


def skip_step_sample(x_T, denoiser, skip, params, cfg, rng, schedule=None,
                     expert_cfg=None, router_cfg=None, trace=None):
    sampler = GuidedSampler(
        denoiser, schedule or NoiseSchedule.cosine(x_T.timestep), params,
        expert_cfg or ExpertConfig(), router_cfg or RouterConfig(), cfg,
    )
    return sampler.sample(x_T, rng, skip=skip, trace=trace)
