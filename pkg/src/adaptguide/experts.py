"""Physics experts: scalar losses and per-residue gradients w.r.t. translations.

Every quantity here is a function of inter-residue distances only, so each
gradient field rotates with the structure and ignores global translations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .exceptions import ContractError, DomainError
from .se3 import TARGET


class ExpertId(str, Enum):
    VDW = "VDW"
    RECOGNITION = "Recognition"
    ENERGY = "Energy"
    INTERFACE = "Interface"


EXPERTS = (ExpertId.VDW, ExpertId.RECOGNITION, ExpertId.ENERGY, ExpertId.INTERFACE)


@dataclass(frozen=True)
class ExpertConfig:
    r_clash: float = 2.8
    d_cutoff: float = 8.0
    coverage_dist: float = 8.0
    tau_minus: float = 5.0
    tau_plus: float = 30.0
    d_c: float = 8.0
    w_u: float = 1.0
    w_c: float = 1.0
    r_neighbor: float = 8.0
    n_threshold: float = 4.0
    kappa: float = 0.5

    def __post_init__(self):
        if not self.r_clash > 0:
            raise DomainError("r_clash must be positive")
        if self.tau_minus > self.tau_plus:
            raise DomainError("tau_minus must not exceed tau_plus")
        if self.w_u < 0 or self.w_c < 0:
            raise DomainError("geometry weights must be nonnegative")
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")


@dataclass
class ExpertGradient:
    loss: float
    grad: np.ndarray
    expert_id: ExpertId
    info: dict = field(default_factory=dict)


def _unit(diff, d):
    """Unit vectors ``diff / d`` with the x-axis standing in for ``d == 0``."""
    out = np.empty_like(diff)
    zero = d == 0.0
    out[~zero] = diff[~zero] / d[~zero, None]
    out[zero] = (1.0, 0.0, 0.0)
    return out


def _accumulate_pairs(n, i, j, coef, diff, d):
    """Scatter ``coef * d(d_ij)/dx`` into residue i (+) and residue j (-)."""
    grad = np.zeros((n, 3))
    contrib = coef[:, None] * _unit(diff, d)
    np.add.at(grad, i, contrib)
    np.add.at(grad, j, -contrib)
    return grad


def vdw_pairs(state):
    """Unordered pairs within CDR + target, skipping target-target pairs."""
    support = np.union1d(state.cdr, state.target)
    i, j = np.triu_indices(support.size, k=1)
    i, j = support[i], support[j]
    keep = ~((state.region[i] == TARGET) & (state.region[j] == TARGET))
    return i[keep], j[keep]


def vdw_loss_grad(state, cfg):
    i, j = vdw_pairs(state)
    if i.size == 0:
        raise ContractError("VDW expert needs at least two CDR/target residues")
    diff = state.trans[i] - state.trans[j]
    d = np.linalg.norm(diff, axis=1)
    active = d < cfg.r_clash
    gap = cfg.r_clash - d[active]
    loss = float(np.sum(gap**2))
    # dL/dd = -2 (r - d); descent pushes the pair apart
    grad = _accumulate_pairs(
        state.n, i[active], j[active], -2.0 * gap, diff[active], d[active]
    )
    return ExpertGradient(loss, grad, ExpertId.VDW, {"n_clashes": int(active.sum())})


def hotspot_assignments(state, cfg):
    """Per hotspot: nearest CDR residue, squared distance, and coverage flag."""
    cdr = state.cdr
    if cdr.size == 0:
        raise ContractError("recognition expert needs at least one CDR residue")
    hs = np.asarray(state.hotspots, dtype=int)
    if hs.size == 0:
        return hs, np.zeros(0, dtype=int), np.zeros(0), np.zeros(0, dtype=bool)
    d2 = np.sum((state.trans[hs][:, None, :] - state.trans[cdr][None, :, :]) ** 2, axis=-1)
    k = np.argmin(d2, axis=1)  # first minimum -> lowest residue index on ties
    nearest = cdr[k]
    dmin2 = d2[np.arange(hs.size), k]
    uncovered = np.sqrt(dmin2) > cfg.coverage_dist
    return hs, nearest, dmin2, uncovered


def hotspot_loss_grad(state, cfg):
    """Sum over hotspots of the squared distance to the nearest CDR residue.

    The gradient is applied to the nearest CDR residue of each uncovered
    hotspot only, so it matches the loss restricted to uncovered hotspots
    with hotspot positions held fixed.
    """
    hs, nearest, dmin2, uncovered = hotspot_assignments(state, cfg)
    grad = np.zeros((state.n, 3))
    for h, c in zip(hs[uncovered], nearest[uncovered]):
        grad[c] += 2.0 * (state.trans[c] - state.trans[h])
    return ExpertGradient(
        float(np.sum(dmin2)),
        grad,
        ExpertId.RECOGNITION,
        {"n_hotspots": int(hs.size), "n_uncovered": int(uncovered.sum())},
    )


def _cross_pairs(state):
    cdr, tgt = state.cdr, state.target
    i = np.repeat(cdr, tgt.size)
    j = np.tile(tgt, cdr.size)
    return i, j


def smooth_contact_count(state, cfg):
    i, j = _cross_pairs(state)
    diff = state.trans[i] - state.trans[j]
    d = np.linalg.norm(diff, axis=1)
    s = expit((cfg.d_c - d) / cfg.kappa)
    return float(np.sum(s)), (i, j, diff, d, s)


def contact_penalty(n_c, cfg):
    """Quadratic hinge outside ``[tau_minus, tau_plus]``; returns (loss, dloss/dn)."""
    if n_c < cfg.tau_minus:
        gap = cfg.tau_minus - n_c
        return gap**2, -2.0 * gap
    if n_c > cfg.tau_plus:
        gap = n_c - cfg.tau_plus
        return gap**2, 2.0 * gap
    return 0.0, 0.0


def contact_loss_grad(state, cfg):
    n_c, (i, j, diff, d, s) = smooth_contact_count(state, cfg)
    loss, dl_dn = contact_penalty(n_c, cfg)
    grad = np.zeros((state.n, 3))
    if dl_dn != 0.0:
        dn_dd = -s * (1.0 - s) / cfg.kappa
        grad = _accumulate_pairs(state.n, i, j, dl_dn * dn_dd, diff, d)
    return ExpertGradient(float(loss), grad, ExpertId.ENERGY, {"smooth_contacts": n_c})


def interface_set(state, cutoff):
    """Residues with at least one cross-chain partner closer than ``cutoff``."""
    ab = np.flatnonzero(state.region != TARGET)
    ag = state.target
    if ab.size == 0 or ag.size == 0:
        return np.zeros(0, dtype=int)
    d = np.linalg.norm(state.trans[ab][:, None] - state.trans[ag][None], axis=-1)
    close = d < cutoff
    return np.sort(np.concatenate([ab[close.any(axis=1)], ag[close.any(axis=0)]]))


def interface_pairs(state, iface, cutoff):
    a, b = np.triu_indices(iface.size, k=1)
    i, j = iface[a], iface[b]
    diff = state.trans[i] - state.trans[j]
    d = np.linalg.norm(diff, axis=1)
    keep = d < cutoff
    return i[keep], j[keep], diff[keep], d[keep]


def uniformity_cv(d):
    """Population coefficient of variation; 0 for fewer than two distances."""
    if d.size < 2:
        return 0.0
    return float(np.std(d) / np.mean(d))


def _uniformity_loss_grad(state, iface, cfg):
    i, j, diff, d = interface_pairs(state, iface, cfg.d_cutoff)
    m = d.size
    if m < 2:
        return 0.0, np.zeros((state.n, 3))
    mu = d.mean()
    sd = d.std()
    cv = sd / mu
    if sd == 0.0:
        return 0.0, np.zeros((state.n, 3))
    dcv_dd = ((d - mu) / (m * sd)) / mu - sd / (mu**2 * m)
    return float(cv), _accumulate_pairs(state.n, i, j, dcv_dd, diff, d)


def smooth_neighbor_counts(state, cfg):
    diff = state.trans[:, None, :] - state.trans[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    s = expit((cfg.r_neighbor - d) / cfg.kappa)
    np.fill_diagonal(s, 0.0)
    return s.sum(axis=1), diff, d, s


def _cavity_loss_grad(state, iface, cfg):
    counts, diff, d, s = smooth_neighbor_counts(state, cfg)
    ind = expit((cfg.n_threshold - counts[iface]) / cfg.kappa)
    loss = float(ind.mean())
    # d loss / d N_i for i in the interface
    dl_dn = -(ind * (1.0 - ind) / cfg.kappa) / iface.size
    # d N_i / d d_ij
    dn_dd = -s[iface] * (1.0 - s[iface]) / cfg.kappa
    coef = dl_dn[:, None] * dn_dd  # (|I|, N)
    rows = np.repeat(iface, state.n)
    cols = np.tile(np.arange(state.n), iface.size)
    flat = coef.ravel()
    nz = flat != 0.0
    grad = _accumulate_pairs(
        state.n, rows[nz], cols[nz], flat[nz], diff[rows[nz], cols[nz]], d[rows[nz], cols[nz]]
    )
    return loss, grad


def interface_loss_grad(state, cfg):
    iface = interface_set(state, cfg.d_cutoff)
    if iface.size == 0:
        return ExpertGradient(
            0.0, np.zeros((state.n, 3)), ExpertId.INTERFACE, {"empty_interface": True}
        )
    cv, g_u = _uniformity_loss_grad(state, iface, cfg)
    cav, g_c = _cavity_loss_grad(state, iface, cfg)
    return ExpertGradient(
        cfg.w_u * cv + cfg.w_c * cav,
        cfg.w_u * g_u + cfg.w_c * g_c,
        ExpertId.INTERFACE,
        {"empty_interface": False, "uniformity_cv": cv, "smooth_cavity": cav,
         "n_interface": int(iface.size)},
    )


EXPERT_FUNCS = {
    ExpertId.VDW: vdw_loss_grad,
    ExpertId.RECOGNITION: hotspot_loss_grad,
    ExpertId.ENERGY: contact_loss_grad,
    ExpertId.INTERFACE: interface_loss_grad,
}


def evaluate_expert(expert_id, state, cfg):
    return EXPERT_FUNCS[ExpertId(expert_id)](state, cfg)
