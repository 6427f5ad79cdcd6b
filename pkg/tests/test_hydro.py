import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from reach_surrogate.hydro import (
    NormalDepthError,
    OracleConfig,
    StateField,
    SyntheticSpec,
    backwater_weights,
    gen_synthetic_forcings,
    gen_synthetic_reach,
    manning_discharge,
    normal_depth,
    normal_stage,
    parse_state_csv,
    route_discharge,
    route_reach,
    serialize_state_csv,
)
from oracles import rectangular_reach
from reach_surrogate.ingest import ForcingSeries


# ---------------------------------------------------------------- Manning

def test_manning_zero_depth():
    assert manning_discharge(0.0, 10.0, 1e-4, 0.03) == 0.0


def test_manning_hand_value():
    A, P = 20.0, 14.0
    expected = (1 / 0.03) * A * (A / P) ** (2 / 3) * 1e-4**0.5
    q = manning_discharge(2.0, 10.0, 1e-4, 0.03)
    assert q == pytest.approx(expected, rel=1e-14)
    # the rounded hand value 8.457 agrees to the stated precision
    assert q == pytest.approx(8.457, abs=1e-3)
    assert q == pytest.approx(8.456229, abs=1e-6)


def test_manning_inverse_in_roughness():
    assert manning_discharge(1.3, 7.0, 3e-4, 0.06) == pytest.approx(0.5 * manning_discharge(1.3, 7.0, 3e-4, 0.03), rel=1e-15)


@pytest.mark.parametrize("args", [(1.0, 0.0, 1e-4, 0.03), (1.0, 5.0, 0.0, 0.03), (1.0, 5.0, 1e-4, 0.0), (-1.0, 5.0, 1e-4, 0.03)])
def test_manning_domain_errors(args):
    with pytest.raises(ValueError):
        manning_discharge(*args)


def test_normal_depth_examples():
    assert normal_depth(0.0, 10.0, 1e-4, 0.03) == 0.0
    q = manning_discharge(2.0, 10.0, 1e-4, 0.03)
    assert normal_depth(q, 10.0, 1e-4, 0.03) == pytest.approx(2.0, abs=1e-6)


@given(st.floats(0.01, 5000.0), st.floats(5.0, 200.0), st.floats(1e-5, 1e-2), st.floats(0.01, 0.2))
def test_normal_depth_inverts_manning(q, width, slope, n):
    if manning_discharge(1000.0, width, slope, n) <= q:
        with pytest.raises(NormalDepthError):
            normal_depth(q, width, slope, n)
        return
    d = normal_depth(q, width, slope, n)
    assert manning_discharge(d, width, slope, n) == pytest.approx(q, rel=1e-9)
    # independent root finder
    ref = brentq(lambda h: manning_discharge(h, width, slope, n) - q, 0.0, 1000.0, xtol=1e-14, rtol=1e-14)
    assert d == pytest.approx(ref, rel=1e-8)


@given(st.floats(0.1, 1000.0), st.floats(0.1, 1000.0))
def test_normal_depth_monotone(q1, q2):
    if q1 == q2:
        return
    lo, hi = sorted((q1, q2))
    assert normal_depth(lo, 30.0, 2e-4, 0.03) < normal_depth(hi, 30.0, 2e-4, 0.03)


def test_normal_depth_bracket_failure():
    with pytest.raises(NormalDepthError):
        normal_depth(1e12, 1.0, 1e-5, 0.2, d_max=50.0)


def test_normal_depth_vectorised():
    q = np.array([0.0, 10.0, 100.0])
    d = normal_depth(q, 20.0, 1e-4, 0.035)
    assert d.shape == (3,)
    for qi, di in zip(q, d):
        assert di == pytest.approx(normal_depth(qi, 20.0, 1e-4, 0.035), rel=1e-11)


# ---------------------------------------------------------------- routing

def test_steady_state_matches_analytic_normal_depth():
    reach = rectangular_reach()
    Q0 = 80.0
    slope = 2e-4
    depth = brentq(lambda h: manning_discharge(h, 40.0, slope, 0.03) - Q0, 0.0, 100.0, xtol=1e-14)
    T = 600
    h_dn = reach.z_bed[-1] + depth
    state = route_reach(reach, ForcingSeries(np.full(T, Q0), np.full(T, h_dn)))
    assert np.max(np.abs(state.q[-1] - Q0)) < 1e-3 * Q0
    analytic = reach.z_bed + depth
    rel = np.abs(state.h[-1] - analytic) / depth
    assert np.max(rel) < 1e-3


def test_boundary_conditions_hold():
    spec = SyntheticSpec(seed=2, n_xs=10, duration_hours=300)
    reach = gen_synthetic_reach(spec)
    f = gen_synthetic_forcings(spec, reach)
    state = route_reach(reach, f)
    np.testing.assert_array_equal(state.q[:, 0], f.q_up)
    np.testing.assert_array_equal(state.h[:, -1], f.h_dn)
    assert np.all(state.q >= 0)
    assert np.all(state.h >= reach.z_bed)
    assert np.all(np.isfinite(state.h))


def test_pulse_volume_balance():
    reach = rectangular_reach(n_xs=15, length=20_000.0)
    T = 800
    t = np.arange(T, dtype=float)
    q_up = 20.0 + 180.0 * np.exp(-0.5 * ((t - 100.0) / 15.0) ** 2)
    q = route_discharge(reach, q_up)
    assert q[-1, -1] == pytest.approx(20.0, rel=1e-3)  # the pulse has left the reach
    balance = q[:, -1].sum() / q_up.sum()
    assert abs(balance - 1.0) < 0.02


def test_pulse_attenuates_and_delays():
    reach = rectangular_reach(n_xs=15, length=20_000.0)
    t = np.arange(400, dtype=float)
    q_up = 20.0 + 180.0 * np.exp(-0.5 * ((t - 100.0) / 10.0) ** 2)
    q = route_discharge(reach, q_up)
    assert q[:, -1].max() < q_up.max()
    assert np.argmax(q[:, -1]) > np.argmax(q_up)


def test_zero_inflow():
    reach = rectangular_reach()
    T = 50
    h_dn = reach.z_bed[-1] + 0.4
    state = route_reach(reach, ForcingSeries(np.zeros(T), np.full(T, h_dn)))
    assert np.all(state.q == 0.0)
    expected = reach.z_bed + 0.4 * backwater_weights(reach.n_xs)
    np.testing.assert_allclose(state.h[-1], expected, atol=1e-12)


def test_backwater_weights():
    w = backwater_weights(20)
    B = 4
    assert w[-1] == 1.0
    assert np.all(w[: 20 - B] == 0.0)
    np.testing.assert_allclose(w[20 - B :], [0.25, 0.5, 0.75, 1.0])
    assert np.count_nonzero(backwater_weights(6)) == 3


def test_halving_substep_changes_little():
    spec = SyntheticSpec(seed=3, n_xs=20, duration_hours=600, event_count=1)
    reach = gen_synthetic_reach(spec)
    f = gen_synthetic_forcings(spec, reach)
    base = route_reach(reach, f, OracleConfig(substeps=4))
    fine = route_reach(reach, f, OracleConfig(substeps=8))
    depth = base.h - reach.z_bed
    assert np.max(np.abs(base.h - fine.h) / np.maximum(depth, 1e-9)) < 1e-3
    # steady profile
    reach = rectangular_reach()
    f = ForcingSeries(np.full(100, 60.0), np.full(100, normal_stage(reach, np.full(reach.n_xs, 60.0))[-1]))
    a = route_reach(reach, f, OracleConfig(substeps=3)).h[-1]
    b = route_reach(reach, f, OracleConfig(substeps=6)).h[-1]
    assert np.max(np.abs(a - b) / np.abs(a)) < 1e-3


def test_downstream_stage_below_bed_rejected():
    reach = rectangular_reach()
    with pytest.raises(ValueError):
        route_reach(reach, ForcingSeries(np.ones(20), np.full(20, reach.z_bed[-1] - 1.0)))


# ---------------------------------------------------------------- synthetic data

def test_synthetic_generation_is_deterministic():
    spec = SyntheticSpec(seed=11, n_xs=12, duration_hours=300)
    r1, r2 = gen_synthetic_reach(spec), gen_synthetic_reach(spec)
    assert r1 == r2
    assert gen_synthetic_forcings(spec, r1) == gen_synthetic_forcings(spec, r2)


@pytest.mark.parametrize("seed", range(8))
def test_event_count_matches_local_maxima(seed):
    spec = SyntheticSpec(seed=seed, n_xs=10, duration_hours=2000, event_count=3)
    reach = gen_synthetic_reach(spec)
    q = gen_synthetic_forcings(spec, reach).q_up
    interior = q[1:-1]
    peaks = (interior > q[:-2]) & (interior > q[2:]) & (interior > 2 * spec.base_flow_m3s)
    assert int(peaks.sum()) == 3


def test_degenerate_roughness_range():
    reach = gen_synthetic_reach(SyntheticSpec(seed=1, manning_range=(0.03, 0.03)))
    assert np.all(reach.manning_n == 0.03)


def test_synthetic_reach_shape():
    reach = gen_synthetic_reach(SyntheticSpec(seed=4, n_xs=40))
    assert reach.n_xs == 40
    assert np.all(np.diff(reach.z_bed) < 0)
    assert np.all(reach.z_bank > reach.z_bed)


@pytest.mark.parametrize("bad", [dict(slope=0.0), dict(manning_range=(0.0, 0.1)), dict(duration_hours=12), dict(n_xs=2)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        SyntheticSpec(**bad)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_routed_fields_are_physical(seed):
    spec = SyntheticSpec(seed=seed, n_xs=8, length_m=10_000.0, duration_hours=150)
    reach = gen_synthetic_reach(spec)
    state = route_reach(reach, gen_synthetic_forcings(spec, reach))
    assert np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.q))
    assert np.all(state.q >= 0)
    assert np.all(state.h >= reach.z_bed)


# ---------------------------------------------------------------- state files

def test_state_csv_round_trip():
    rng = np.random.default_rng(0)
    s = StateField(rng.uniform(1, 5, (6, 4)), rng.uniform(0, 50, (6, 4)), reach_id="r", t0=3)
    again = parse_state_csv(serialize_state_csv(s), "r")
    assert again == s


def test_state_csv_incomplete_grid():
    text = "hour,xs_index,h,q\n0,0,1.0,2.0\n0,1,1.0,2.0\n1,0,1.0,2.0\n"
    with pytest.raises(ValueError):
        parse_state_csv(text)


def test_state_field_shape_checked():
    with pytest.raises(ValueError):
        StateField(np.zeros((3, 4)), np.zeros((3, 5)))
