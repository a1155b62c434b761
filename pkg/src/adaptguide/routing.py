"""Severity scores from live structural metrics and the weights derived from them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError
from .experts import EXPERTS, ExpertId, hotspot_assignments, interface_pairs, interface_set, uniformity_cv, vdw_pairs


@dataclass(frozen=True)
class RouterConfig:
    theta_min: float = 0.1
    n_target: float | None = None  # None -> midpoint of the contact range
    scale: dict = field(
        default_factory=lambda: {e.value: 1.0 for e in EXPERTS}
    )
    stride: int = 1

    def __post_init__(self):
        if not 0.0 <= self.theta_min < 1.0:
            raise DomainError("theta_min must lie in [0, 1)")
        if self.stride < 1:
            raise DomainError("severity stride must be >= 1")


@dataclass
class SeverityReport:
    s: dict
    w: dict
    activated: frozenset

    def weight(self, expert_id):
        return self.w[ExpertId(expert_id)]

    def as_dict(self):
        return {
            "severities": {k.value: v for k, v in self.s.items()},
            "weights": {k.value: v for k, v in self.w.items()},
            "activated": sorted(k.value for k in self.activated),
        }


def _clamp01(x):
    return float(min(1.0, max(0.0, x)))


def hard_contact_count(state, d_c):
    cdr, tgt = state.cdr, state.target
    if cdr.size == 0 or tgt.size == 0:
        return 0
    d = np.linalg.norm(state.trans[cdr][:, None] - state.trans[tgt][None], axis=-1)
    return int(np.count_nonzero(d < d_c))


def hard_cavity_fraction(state, iface, r_neighbor, n_threshold):
    if iface.size == 0:
        return 0.0
    d = np.linalg.norm(state.trans[iface][:, None] - state.trans[None], axis=-1)
    counts = np.count_nonzero(d < r_neighbor, axis=1) - 1  # drop self
    return float(np.count_nonzero(counts < n_threshold) / iface.size)


def compute_severities(state, cfg, expert_cfg):
    """Four severities in [0, 1], keyed by :class:`ExpertId`."""
    scale = {ExpertId(k): v for k, v in cfg.scale.items()}
    sev = {}

    i, j = vdw_pairs(state)
    if i.size:
        d_min = float(np.min(np.linalg.norm(state.trans[i] - state.trans[j], axis=1)))
        raw = max(0.0, (expert_cfg.r_clash - d_min) / expert_cfg.r_clash)
    else:
        raw = 0.0
    sev[ExpertId.VDW] = _clamp01(raw)

    if len(state.hotspots) and state.cdr.size:
        _, _, _, uncovered = hotspot_assignments(state, expert_cfg)
        sev[ExpertId.RECOGNITION] = uncovered.sum() / uncovered.size
    else:
        sev[ExpertId.RECOGNITION] = 0.0

    n_c = hard_contact_count(state, expert_cfg.d_c)
    n_target = cfg.n_target
    if n_target is None:
        n_target = 0.5 * (expert_cfg.tau_minus + expert_cfg.tau_plus)
    if expert_cfg.tau_minus <= n_c <= expert_cfg.tau_plus or n_target <= 0:
        sev[ExpertId.ENERGY] = 0.0
    else:
        sev[ExpertId.ENERGY] = _clamp01(abs(n_c - n_target) / n_target)

    iface = interface_set(state, expert_cfg.d_cutoff)
    if iface.size:
        _, _, _, d = interface_pairs(state, iface, expert_cfg.d_cutoff)
        cv = uniformity_cv(d)
        cav = hard_cavity_fraction(state, iface, expert_cfg.r_neighbor, expert_cfg.n_threshold)
        sev[ExpertId.INTERFACE] = 0.5 * _clamp01(cv / 0.5) + 0.5 * cav
    else:
        sev[ExpertId.INTERFACE] = 0.0

    return {e: _clamp01(scale.get(e, 1.0) * float(sev[e])) for e in EXPERTS}


def route_weights(severities, theta_min):
    """Normalise the severities of experts above ``theta_min`` to sum to one."""
    if isinstance(severities, dict):
        s = {ExpertId(k): float(v) for k, v in severities.items()}
    else:
        s = dict(zip(EXPERTS, map(float, severities)))
    for v in s.values():
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"severity {v} outside [0, 1]")
    active = [e for e in EXPERTS if s[e] > theta_min]
    total = sum(s[e] for e in active)
    w = {e: (s[e] / total if e in active else 0.0) for e in EXPERTS}
    return SeverityReport(s=s, w=w, activated=frozenset(active))
