import copy

import numpy as np
import pytest

from reach_surrogate.estimator import GRUGeoFNORegressor, build_dataset
from reach_surrogate.hydro import SyntheticSpec, StateField, gen_synthetic_forcings, gen_synthetic_reach, route_reach
from reach_surrogate.model import forward
from reach_surrogate.rollout import MaskMismatch, RolloutConfig, RolloutInstability, STAGE_MARGIN_M, rollout


@pytest.fixture(scope="module")
def setup():
    spec = SyntheticSpec(seed=12, n_xs=8, length_m=8000.0, duration_hours=200, event_count=1)
    reach = gen_synthetic_reach(spec)
    f = gen_synthetic_forcings(spec, reach)
    truth = route_reach(reach, f)
    X, y = build_dataset(reach, [(truth, f)])
    est = GRUGeoFNORegressor(hidden=8, max_modes=4, epochs=3, random_state=0).fit(X, y, x_coord=reach.x_coord)
    return reach, f, truth, est


def test_single_step_is_one_forward(setup):
    reach, f, truth, est = setup
    calls = []
    out = rollout(est, reach, f, truth, 1, callback=lambda s, w: calls.append(s))
    assert calls == [0]
    assert out.n_hours == 13
    np.testing.assert_array_equal(out.h[:12], truth.h[:12])
    np.testing.assert_array_equal(out.q[:12], truth.q[:12])
    window = np.stack([truth.h[:12], truth.q[:12]], axis=-1)
    X, _ = build_dataset(reach, [(truth, f)])
    xn = est.transform_windows(X[:1])
    direct = forward(est.params_, xn, est.x_coord_, est.residual)[0][0]
    expected = direct * est.norm_stats_.std[:2] + est.norm_stats_.mean[:2]
    np.testing.assert_allclose(out.h[12], expected[:, 0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.q[12], expected[:, 1], rtol=0, atol=1e-10)
    assert window.shape == (12, reach.n_xs, 2)


def test_predictions_are_fed_back(setup):
    reach, f, truth, est = setup
    windows = {}
    out = rollout(est, reach, f, truth, 5, callback=lambda s, w: windows.__setitem__(s, w))
    assert sorted(windows) == [0, 1, 2, 3, 4]
    # window at step 2 ends with the step-1 prediction (hour 13), not the truth
    np.testing.assert_array_equal(windows[2][-1, :, 0], out.h[13])
    np.testing.assert_array_equal(windows[2][-1, :, 1], out.q[13])
    assert not np.array_equal(windows[2][-1, :, 0], truth.h[13])
    # the oldest rows are still warmup truth
    np.testing.assert_array_equal(windows[2][0, :, 0], truth.h[2])


def test_boundary_channels_are_anchored(setup):
    reach, f, truth, est = setup
    seen = []

    def check(step, w):
        hours = slice(step, step + 12)
        seen.append(
            np.array_equal(w[:, :, 6], np.broadcast_to(f.q_up[hours, None], w.shape[:2]))
            and np.array_equal(w[:, :, 7], np.broadcast_to(f.h_dn[hours, None], w.shape[:2]))
        )

    rollout(est, reach, f, truth, 40, callback=check)
    assert len(seen) == 40 and all(seen)


def test_rollout_is_deterministic(setup):
    reach, f, truth, est = setup
    a = rollout(est, reach, f, truth, 30)
    b = rollout(est, reach, f, truth, 30)
    assert a == b
    assert a.t0 == truth.t0


def test_long_rollout_stays_bounded(setup):
    reach, f, truth, est = setup
    out = rollout(est, reach, f, truth, len(f) - 12)
    assert np.all(np.isfinite(out.h)) and np.all(np.isfinite(out.q))
    assert np.all(out.h <= reach.z_bank + STAGE_MARGIN_M)


def test_instability_reports_step(setup):
    reach, f, truth, est = setup
    bad = copy.deepcopy(est)
    bad.params_["dec_b"] = bad.params_["dec_b"] + np.array([1e3, 0.0])
    with pytest.raises(RolloutInstability) as info:
        rollout(bad, reach, f, truth, 10)
    assert info.value.step == 0
    bad.params_["dec_b"] = np.array([np.nan, 0.0])
    with pytest.raises(RolloutInstability, match="non-finite"):
        rollout(bad, reach, f, truth, 10)


def test_mask_mismatch(setup):
    reach, f, truth, est = setup
    with pytest.raises(MaskMismatch):
        rollout(est, reach, f, truth, 3, RolloutConfig(3, ablation_mask=("z_bank", "n_man")))
    rollout(est, reach, f, truth, 3, RolloutConfig(3, ablation_mask=()))


def test_input_validation(setup):
    reach, f, truth, est = setup
    with pytest.raises(ValueError):
        RolloutConfig(0)
    with pytest.raises(ValueError):
        rollout(est, reach, f, truth, len(f))  # forcings too short
    with pytest.raises(ValueError):
        rollout(est, reach, f, StateField(truth.h[:5], truth.q[:5]), 3)
    with pytest.raises(ValueError):
        rollout(est, reach, f, truth, 3, RolloutConfig(4))
