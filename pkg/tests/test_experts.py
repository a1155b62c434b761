import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptguide.exceptions import ContractError, DomainError
from adaptguide.experts import (
    EXPERTS,
    ExpertConfig,
    ExpertId,
    contact_loss_grad,
    contact_penalty,
    evaluate_expert,
    hotspot_assignments,
    hotspot_loss_grad,
    interface_loss_grad,
    smooth_contact_count,
    uniformity_cv,
    vdw_loss_grad,
)
from adaptguide.metrics import interface_geometry
from adaptguide.routing import hard_contact_count
from adaptguide.se3 import CDR, FRAMEWORK, TARGET, StructureState
from adaptguide.synthetic import random_structure

from conftest import rigid_motion

ACTIVE = {
    # configurations that make every expert's loss nonzero on random clouds
    ExpertId.VDW: ExpertConfig(),
    ExpertId.RECOGNITION: ExpertConfig(coverage_dist=2.0),
    ExpertId.ENERGY: ExpertConfig(tau_minus=500.0, tau_plus=600.0),
    ExpertId.INTERFACE: ExpertConfig(),
}


def make(trans, regions, hotspots=()):
    trans = np.asarray(trans, dtype=float)
    return StructureState(np.stack([np.eye(3)] * len(trans)), trans, regions, hotspots, 0)


def fd_gradient(state, loss_fn, rows, h=1e-5):
    out = np.zeros((state.n, 3))
    for i in rows:
        for k in range(3):
            plus = state.trans.copy()
            minus = state.trans.copy()
            plus[i, k] += h
            minus[i, k] -= h
            out[i, k] = (loss_fn(state.with_coords(trans=plus))
                         - loss_fn(state.with_coords(trans=minus))) / (2 * h)
    return out


def uncovered_loss(assign):
    """Recognition loss restricted to the uncovered hotspots, assignment frozen."""
    hs, nearest, _, unc = assign

    def f(s):
        return float(sum(np.sum((s.trans[c] - s.trans[h]) ** 2) for h, c in zip(hs[unc], nearest[unc])))
    return f


def check_fd(state, expert_id, cfg):
    res = evaluate_expert(expert_id, state, cfg)
    if expert_id == ExpertId.RECOGNITION:
        loss_fn = uncovered_loss(hotspot_assignments(state, cfg))
        rows = state.cdr
    else:
        loss_fn = lambda s: evaluate_expert(expert_id, s, cfg).loss  # noqa: E731
        rows = range(state.n)
    fd = fd_gradient(state, loss_fn, rows)
    grad = res.grad if expert_id != ExpertId.RECOGNITION else np.where(
        np.isin(np.arange(state.n), state.cdr)[:, None], res.grad, 0.0)
    scale = np.linalg.norm(fd)
    if scale == 0.0:
        return np.linalg.norm(grad)
    return np.linalg.norm(grad - fd) / scale


# VDW ---------------------------------------------------------------------------

def test_vdw_no_clash_is_zero():
    s = make([[0, 0, 0], [3.0, 0, 0], [0, 3.5, 0]], [CDR, TARGET, CDR])
    res = vdw_loss_grad(s, ExpertConfig())
    assert res.loss == 0.0
    assert not res.grad.any()


def test_vdw_single_pair_loss_and_direction():
    s = make([[0, 0, 0], [1.8, 0, 0]], [CDR, TARGET])
    res = vdw_loss_grad(s, ExpertConfig())
    assert res.loss == pytest.approx((2.8 - 1.8) ** 2)
    fd = fd_gradient(s, lambda x: vdw_loss_grad(x, ExpertConfig()).loss, range(2), h=1e-6)
    assert np.allclose(res.grad, fd, rtol=1e-6, atol=1e-8)
    # descent moves residue 0 away from residue 1
    assert res.grad[0, 0] > 0 and res.grad[1, 0] < 0
    assert ExpertConfig().r_clash == 2.8


def test_vdw_ignores_target_target_pairs():
    s = make([[0, 0, 0], [1.0, 0, 0], [20.0, 0, 0]], [TARGET, TARGET, CDR])
    assert vdw_loss_grad(s, ExpertConfig()).loss == 0.0


def test_vdw_coincident_pair_uses_x_axis():
    s = make([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], [CDR, TARGET])
    g = vdw_loss_grad(s, ExpertConfig()).grad
    assert np.allclose(g[0], [-2 * 2.8, 0, 0])


def test_vdw_needs_pairs():
    with pytest.raises(ContractError):
        vdw_loss_grad(make([[0, 0, 0]], [CDR]), ExpertConfig())


# recognition -------------------------------------------------------------------

def test_hotspot_covered_gives_zero_gradient():
    s = make([[0, 0, 0], [3, 0, 0]], [TARGET, CDR], hotspots=(0,))
    res = hotspot_loss_grad(s, ExpertConfig())
    assert res.loss == pytest.approx(9.0)
    assert not res.grad.any()


def test_hotspot_uncovered_example():
    s = make([[0, 0, 0], [3, 0, 0], [5, 1, 0], [0, 9, 0]], [TARGET, CDR, CDR, CDR], hotspots=(0,))
    res = hotspot_loss_grad(s, ExpertConfig(coverage_dist=2.0))
    brute = min(np.sum((s.trans[c] - s.trans[0]) ** 2) for c in (1, 2, 3))
    assert res.loss == pytest.approx(brute) == pytest.approx(9.0)
    assert np.allclose(res.grad[1], [6.0, 0.0, 0.0])
    assert not np.delete(res.grad, 1, axis=0).any()


def test_hotspot_tie_goes_to_lowest_index():
    s = make([[0, 0, 0], [0, 4, 0], [4, 0, 0]], [TARGET, CDR, CDR], hotspots=(0,))
    _, nearest, _, _ = hotspot_assignments(s, ExpertConfig(coverage_dist=1.0))
    assert nearest.tolist() == [1]


# contacts ----------------------------------------------------------------------

def test_contact_in_range_is_zero(complex_state):
    cfg = ExpertConfig()
    n, _ = smooth_contact_count(complex_state, cfg)
    assert cfg.tau_minus <= n <= cfg.tau_plus
    res = contact_loss_grad(complex_state, cfg)
    assert res.loss == 0.0 and not res.grad.any()


def test_contact_penalty_below_range():
    # six CDR residues exactly at d_c from one target residue: each counts 1/2
    d = 8.0
    pts = [[0, 0, 0]] + [list(v) for v in d * np.vstack([np.eye(3), -np.eye(3)])]
    s = make(pts, [TARGET] + [CDR] * 6)
    cfg = ExpertConfig(tau_minus=5.0)
    n, _ = smooth_contact_count(s, cfg)
    assert n == pytest.approx(3.0)
    res = contact_loss_grad(s, cfg)
    assert res.loss == pytest.approx(4.0)
    fd = fd_gradient(s, lambda x: contact_loss_grad(x, cfg).loss, range(s.n))
    assert np.linalg.norm(res.grad - fd) <= 1e-6 * np.linalg.norm(fd)


def test_contact_penalty_hinges():
    cfg = ExpertConfig(tau_minus=5, tau_plus=30)
    assert contact_penalty(3.0, cfg) == (4.0, -4.0)
    assert contact_penalty(33.0, cfg) == (9.0, 6.0)
    assert contact_penalty(10.0, cfg) == (0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_smooth_count_converges_to_hard_count(seed):
    s = random_structure(np.random.default_rng(seed), 30)
    cfg = ExpertConfig(kappa=1e-5)
    i = np.repeat(s.cdr, s.target.size)
    j = np.tile(s.target, s.cdr.size)
    d = np.linalg.norm(s.trans[i] - s.trans[j], axis=1)
    if np.any(np.abs(d - cfg.d_c) < 1e-3):
        return
    n, _ = smooth_contact_count(s, cfg)
    assert n == pytest.approx(hard_contact_count(s, cfg.d_c), abs=1e-9)


# interface ---------------------------------------------------------------------

def test_uniformity_cv_examples():
    assert uniformity_cv(np.array([4.0, 6.0])) == pytest.approx(0.2)
    assert uniformity_cv(np.array([5.0, 5.0, 5.0])) == 0.0
    assert uniformity_cv(np.array([5.0])) == 0.0


def test_interface_equal_distances_have_zero_uniformity():
    # equilateral triangle: every interface pair at the same distance
    pts = [[0, 0, 0], [5, 0, 0], [2.5, 5 * np.sqrt(3) / 2, 0]]
    s = make(pts, [CDR, TARGET, TARGET])
    res = interface_loss_grad(s, ExpertConfig(n_threshold=1.0))
    assert res.info["uniformity_cv"] == pytest.approx(0.0, abs=1e-15)


def test_interface_crowded_has_no_cavities():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 4, (16, 3))
    s = make(pts, [CDR] * 8 + [TARGET] * 8)
    _, cav = interface_geometry(s)
    assert cav == 0.0
    assert interface_loss_grad(s, ExpertConfig()).info["smooth_cavity"] < 1e-6


def test_interface_empty_is_zero():
    s = make([[0, 0, 0], [50, 0, 0]], [CDR, TARGET])
    res = interface_loss_grad(s, ExpertConfig())
    assert res.loss == 0.0 and res.info["empty_interface"]


# cross-cutting properties ------------------------------------------------------

@pytest.mark.parametrize("expert", EXPERTS)
def test_finite_differences(expert):
    rng = np.random.default_rng(EXPERTS.index(expert))
    for _ in range(5):
        s = random_structure(rng, int(rng.integers(10, 41)))
        assert check_fd(s, expert, ACTIVE[expert]) <= 1e-5


@pytest.mark.parametrize("expert", EXPERTS)
def test_gradients_equivariant(expert, rng):
    s = random_structure(rng, 25)
    cfg = ACTIVE[expert]
    base = evaluate_expert(expert, s, cfg)
    for _ in range(10):
        q, u = rigid_motion(rng)
        moved = evaluate_expert(expert, s.transformed(q, u), cfg)
        assert np.max(np.abs(moved.grad - base.grad @ q.T)) < 1e-9
        assert moved.loss == pytest.approx(base.loss, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("expert", EXPERTS)
def test_losses_translation_invariant_and_nonnegative(expert, rng):
    s = random_structure(rng, 20)
    cfg = ACTIVE[expert]
    base = evaluate_expert(expert, s, cfg)
    u = np.array([0.25, -0.5, 1.0])
    shifted = evaluate_expert(expert, s.with_coords(trans=s.trans + u), cfg)
    assert base.loss >= 0.0
    assert shifted.loss == pytest.approx(base.loss, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("expert", [ExpertId.VDW, ExpertId.RECOGNITION, ExpertId.ENERGY])
def test_framework_gets_no_gradient(expert, rng):
    for _ in range(5):
        s = random_structure(rng, 30)
        g = evaluate_expert(expert, s, ACTIVE[expert]).grad
        assert not g[s.region == FRAMEWORK].any()


@pytest.mark.parametrize("expert", [ExpertId.VDW, ExpertId.ENERGY, ExpertId.INTERFACE])
def test_zero_loss_implies_zero_gradient(expert, complex_state):
    far = complex_state.with_coords(trans=complex_state.trans * 10.0)
    res = evaluate_expert(expert, far, ExpertConfig(tau_minus=0.0) if expert == ExpertId.ENERGY
                          else ExpertConfig())
    assert res.loss == 0.0
    assert not res.grad.any()


def test_config_validation():
    with pytest.raises(DomainError):
        ExpertConfig(r_clash=0.0)
    with pytest.raises(DomainError):
        ExpertConfig(tau_minus=10, tau_plus=5)
    with pytest.raises(DomainError):
        ExpertConfig(kappa=0.0)
