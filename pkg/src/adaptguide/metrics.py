"""Structure metrics that need no external predictor."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import AlignmentError, ContractError
from .experts import interface_pairs, interface_set, uniformity_cv
from .routing import hard_cavity_fraction, hard_contact_count
from .se3 import TARGET

HOTSPOT_WEIGHTS = (0.4, 0.3, 0.2, 0.1)  # energy, BSA, distance, conservation


@dataclass(frozen=True)
class MetricConfig:
    contact_dist: float = 8.0
    coverage_dist: float = 8.0
    d_cutoff: float = 8.0
    r_neighbor: float = 8.0
    n_threshold: float = 4.0
    contact_optimum: float = 5.0
    gap_scale: float = 2.0


@dataclass
class MetricReport:
    rmsd: float
    hotspot_coverage: float
    cdr_participation: float
    n_contacts: int
    sc_proxy: float
    uniformity_cv: float
    cavity_fraction: float

    def as_dict(self):
        return asdict(self)


def kabsch(mobile, target):
    """Rotation ``r`` and shift ``u`` minimising ``|mobile @ r.T + u - target|``."""
    mobile = np.asarray(mobile, dtype=float)
    target = np.asarray(target, dtype=float)
    if mobile.shape != target.shape:
        raise AlignmentError(f"shape mismatch {mobile.shape} vs {target.shape}")
    cm, ct = mobile.mean(axis=0), target.mean(axis=0)
    p, q = mobile - cm, target - ct
    if np.linalg.matrix_rank(p, tol=1e-8) < 2 or np.linalg.matrix_rank(q, tol=1e-8) < 2:
        raise AlignmentError("alignment set is collinear or degenerate")
    h = p.T @ q
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, ct - cm @ r.T


def aligned_rmsd(candidate, reference, align_set, measure_set=None):
    """RMSD over ``measure_set`` after superposing ``align_set`` onto the reference.

    ``candidate`` and ``reference`` are ``(N, 3)`` coordinate arrays or
    structure states (their translations are used).
    """
    cand = getattr(candidate, "trans", candidate)
    ref = getattr(reference, "trans", reference)
    cand = np.asarray(cand, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if cand.shape != ref.shape:
        raise ContractError("candidate and reference differ in residue count")
    align_set = np.asarray(align_set, dtype=int)
    measure_set = align_set if measure_set is None else np.asarray(measure_set, dtype=int)
    if align_set.size < 3:
        raise AlignmentError("need at least three residues to align")
    if np.array_equal(cand, ref):
        kabsch(cand[align_set], ref[align_set])  # still reject degenerate sets
        return 0.0
    r, u = kabsch(cand[align_set], ref[align_set])
    moved = cand[measure_set] @ r.T + u
    return float(np.sqrt(np.mean(np.sum((moved - ref[measure_set]) ** 2, axis=1))))


def _min_dist(a, b):
    return np.min(np.linalg.norm(a[:, None] - b[None], axis=-1), axis=1)


def hotspot_coverage(state, dist=8.0):
    hs = np.asarray(state.hotspots, dtype=int)
    if hs.size == 0:
        raise ContractError("hotspot coverage needs at least one hotspot")
    if state.cdr.size == 0:
        return 0.0
    covered = _min_dist(state.trans[hs], state.trans[state.cdr]) < dist
    return int(covered.sum()) / hs.size


def cdr_participation(state, dist=8.0):
    """Fraction of CDR residues with a target residue closer than ``dist``."""
    cdr, tgt = state.cdr, state.target
    if cdr.size == 0 or tgt.size == 0:
        return 0.0
    close = _min_dist(state.trans[cdr], state.trans[tgt]) < dist
    return int(close.sum()) / cdr.size


def sc_proxy(state, cfg=None):
    """Distance-based stand-in for shape complementarity, in [0, 1].

    Mean of the per-chain interface fractions times ``exp(-gap / gap_scale)``,
    where ``gap`` averages over interface residues how far the nearest
    cross-chain partner sits beyond ``contact_optimum``.
    """
    cfg = cfg or MetricConfig()
    iface = interface_set(state, cfg.d_cutoff)
    if iface.size == 0:
        return 0.0
    is_ag = state.region == TARGET
    ab, ag = np.flatnonzero(~is_ag), np.flatnonzero(is_ag)
    in_ab = iface[~is_ag[iface]]
    in_ag = iface[is_ag[iface]]
    frac = 0.5 * (in_ab.size / ab.size + in_ag.size / ag.size)
    near = np.concatenate([
        _min_dist(state.trans[in_ab], state.trans[ag]),
        _min_dist(state.trans[in_ag], state.trans[ab]),
    ])
    gap = float(np.mean(np.maximum(near - cfg.contact_optimum, 0.0)))
    return frac * float(np.exp(-gap / cfg.gap_scale))


def interface_geometry(state, cfg=None):
    """Hard (unsmoothed) uniformity CV and cavity fraction of the interface."""
    cfg = cfg or MetricConfig()
    iface = interface_set(state, cfg.d_cutoff)
    if iface.size == 0:
        return 0.0, 0.0
    _, _, _, d = interface_pairs(state, iface, cfg.d_cutoff)
    return uniformity_cv(d), hard_cavity_fraction(state, iface, cfg.r_neighbor, cfg.n_threshold)


def default_alignment(state):
    """Framework residues if there are enough, else every non-CDR residue."""
    fw = state.indices("framework")
    if fw.size >= 3:
        return fw
    rest = np.flatnonzero(state.region != "CDR")
    return rest if rest.size >= 3 else np.arange(state.n)


def evaluate_structure(state, reference=None, cfg=None):
    cfg = cfg or MetricConfig()
    if reference is not None:
        measure = state.cdr if state.cdr.size else np.arange(state.n)
        rmsd = aligned_rmsd(state, reference, default_alignment(state), measure)
    else:
        rmsd = 0.0
    cv, cav = interface_geometry(state, cfg)
    return MetricReport(
        rmsd=rmsd,
        hotspot_coverage=hotspot_coverage(state, cfg.coverage_dist) if state.hotspots else 1.0,
        cdr_participation=cdr_participation(state, cfg.contact_dist),
        n_contacts=hard_contact_count(state, cfg.contact_dist),
        sc_proxy=sc_proxy(state, cfg),
        uniformity_cv=cv,
        cavity_fraction=cav,
    )


def combined_hotspot_score(components):
    """Weighted hotspot score per residue from ``(N, 4)`` components in [0, 1]."""
    c = np.asarray(components, dtype=float)
    if c.ndim != 2 or c.shape[1] != 4:
        raise ContractError("expected (N, 4) component scores")
    if np.any((c < 0) | (c > 1)):
        raise ContractError("component scores must lie in [0, 1]")
    return c @ np.asarray(HOTSPOT_WEIGHTS)


def select_hotspots(components, k=5):
    """Indices of the ``k`` best-scoring residues; ties go to the lower index."""
    score = combined_hotspot_score(components)
    order = np.lexsort((np.arange(score.size), -score))
    return order[:k]
