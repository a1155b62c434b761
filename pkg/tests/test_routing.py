import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptguide.exceptions import DomainError
from adaptguide.experts import EXPERTS, ExpertConfig, ExpertId
from adaptguide.routing import RouterConfig, compute_severities, route_weights
from adaptguide.se3 import CDR, TARGET, StructureState
from adaptguide.synthetic import random_structure, toy_complex

from conftest import rigid_motion

severity = st.floats(0.0, 1.0)
vectors = st.tuples(severity, severity, severity, severity)


def make(trans, regions, hotspots=()):
    trans = np.asarray(trans, dtype=float)
    return StructureState(np.stack([np.eye(3)] * len(trans)), trans, regions, hotspots, 0)


def test_route_examples():
    w = route_weights((0.4, 0.4, 0.0, 0.05), 0.1).w
    assert [w[e] for e in EXPERTS] == [0.5, 0.5, 0.0, 0.0]
    r = route_weights((0.05,) * 4, 0.1)
    assert all(v == 0.0 for v in r.w.values()) and not r.activated
    w = route_weights((1.0, 0.0, 0.0, 0.0), 0.1).w
    assert [w[e] for e in EXPERTS] == [1.0, 0.0, 0.0, 0.0]


def test_route_gate_is_strict():
    r = route_weights((0.1, 0.1000001, 0.0, 0.0), 0.1)
    assert r.activated == frozenset({ExpertId.RECOGNITION})


def test_route_accepts_named_severities():
    r = route_weights({"VDW": 0.3, "Recognition": 0.0, "Energy": 0.6, "Interface": 0.0}, 0.1)
    assert r.weight("Energy") == pytest.approx(2 / 3)


def test_route_rejects_out_of_range():
    with pytest.raises(DomainError):
        route_weights((1.2, 0, 0, 0), 0.1)


@given(vectors)
def test_weights_sum_to_one_over_active(s):
    r = route_weights(s, 0.1)
    active = [e for e in EXPERTS if s[EXPERTS.index(e)] > 0.1]
    if active:
        assert abs(sum(r.w[e] for e in active) - 1.0) <= 1e-12
    for e in EXPERTS:
        if e not in active:
            assert r.w[e] == 0.0


@given(vectors, st.integers(0, 3), st.floats(0.0, 1.0))
def test_weight_monotone_in_own_severity(s, k, bump):
    s = [max(v, 0.11) for v in s]
    hi = list(s)
    hi[k] = min(1.0, s[k] + bump)
    e = EXPERTS[k]
    assert route_weights(hi, 0.1).w[e] >= route_weights(s, 0.1).w[e] - 1e-15


@given(vectors, st.floats(0.55, 1.0))
def test_weights_scale_invariant(s, c):
    s = [0.2 + 0.5 * v for v in s]  # all active before and after scaling
    a = route_weights(s, 0.1).w
    b = route_weights([c * v for v in s], 0.1).w
    assert all(abs(a[e] - b[e]) < 1e-12 for e in EXPERTS)


def test_severity_all_zero_on_clean_structure():
    s = toy_complex(0)
    sev = compute_severities(s, RouterConfig(), ExpertConfig())
    assert sev[ExpertId.VDW] == 0.0
    assert sev[ExpertId.RECOGNITION] == 0.0
    assert sev[ExpertId.ENERGY] == 0.0


def test_severity_uniform_interface_is_zero():
    pts = [[0, 0, 0], [5, 0, 0], [2.5, 5 * np.sqrt(3) / 2, 0]]
    s = make(pts, [CDR, TARGET, TARGET], hotspots=(1,))
    sev = compute_severities(s, RouterConfig(), ExpertConfig(n_threshold=1.0, tau_minus=0.0))
    assert all(v == pytest.approx(0.0, abs=1e-15) for v in sev.values())


def test_vdw_severity_example():
    s = make([[0, 0, 0], [1.4, 0, 0], [30, 0, 0]], [CDR, TARGET, TARGET])
    assert compute_severities(s, RouterConfig(), ExpertConfig())[ExpertId.VDW] == pytest.approx(0.5)


def test_recognition_severity_example():
    # five hotspots, two of them far from the only CDR residue
    tgt = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [40, 0, 0], [0, 40, 0]]
    s = make([[0, 0, 0]] + tgt, [CDR] + [TARGET] * 5, hotspots=(1, 2, 3, 4, 5))
    sev = compute_severities(s, RouterConfig(), ExpertConfig())
    assert sev[ExpertId.RECOGNITION] == pytest.approx(0.4)


def test_severity_scale_factor_and_clamp():
    s = make([[0, 0, 0], [1.4, 0, 0], [30, 0, 0]], [CDR, TARGET, TARGET])
    cfg = RouterConfig(scale={"VDW": 3.0, "Recognition": 1.0, "Energy": 1.0, "Interface": 1.0})
    assert compute_severities(s, cfg, ExpertConfig())[ExpertId.VDW] == 1.0


def test_severities_rigid_invariant(rng):
    for _ in range(10):
        s = random_structure(rng, 30)
        q, u = rigid_motion(rng)
        a = compute_severities(s, RouterConfig(), ExpertConfig())
        b = compute_severities(s.transformed(q, u), RouterConfig(), ExpertConfig())
        assert all(abs(a[e] - b[e]) < 1e-9 for e in EXPERTS)


def test_router_config_validation():
    with pytest.raises(DomainError):
        RouterConfig(theta_min=1.0)
    with pytest.raises(DomainError):
        RouterConfig(stride=0)
