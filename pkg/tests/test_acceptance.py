"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed together at
the end of the run. The long training experiments (4, 5, 6, 8) carry the
``slow`` marker so ``-m "not slow"`` gives a quick pass over the rest.
"""
import csv
import os
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from oracles import central_diff, direct_dft, lowpass, rectangular_reach, rel_err
from reach_surrogate.cli import main
from reach_surrogate.estimator import GRUGeoFNORegressor, build_dataset
from reach_surrogate.experiments import (
    ablate_data_volume,
    ablate_features,
    evaluate_skill,
    extreme_event_corpus,
    roughness_corpus,
    standard_corpus,
)
from reach_surrogate.hydro import SyntheticSpec, gen_synthetic_forcings, gen_synthetic_reach, manning_discharge, route_reach
from reach_surrogate.ingest import ForcingSeries
from reach_surrogate.metrics import mae, nse, rmse
from reach_surrogate.nn.fft import _bluestein, dft, idft
from reach_surrogate.nn.layers import (
    gru_sequence_backward,
    gru_sequence_forward,
    linear_backward,
    linear_forward,
    spectral_conv1d_backward,
    spectral_conv1d_forward,
)
from reach_surrogate.rollout import rollout
from reach_surrogate.storage import (
    atomic_write,
    checkpoint_from_estimator,
    estimator_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
)

# settings for the two ablations (see the notes in the README)
ABLATION = dict(hidden=32, epochs=60, lr=2e-4, dtype="float32")


def _majority(run, seeds=(0, 1, 2)):
    """Run paired seeds until two agree; returns (passed, per-seed outcomes)."""
    outcomes = []
    for s in seeds:
        outcomes.append((s, run(s)))
        wins = sum(ok for _, (ok, _) in outcomes)
        if wins >= 2 or len(outcomes) - wins >= 2:
            break
    return sum(ok for _, (ok, _) in outcomes) >= 2, outcomes


def _fmt(outcomes):
    return "; ".join(f"seed {s}: {'ok' if ok else 'no'} ({d})" for s, (ok, d) in outcomes)


def _arm(result, value):
    return f"aborted [{result.aborted}]" if result.aborted else f"{value:.3f} m"


# ---------------------------------------------------------------- 1

def test_1_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    worst = {"encoder": 0.0, "gru": 0.0, "spectral": 0.0, "decoder": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for name, (d_in, d_out) in (("encoder", (9, 6)), ("decoder", (6, 2))):
            x, W, b = rng.standard_normal((2, 5, d_in)), rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out)
            dy = rng.standard_normal((2, 5, d_out))
            grads = linear_backward(dy, linear_forward(x, W, b)[1], W)
            f = lambda: float(np.sum(linear_forward(x, W, b)[0] * dy))  # noqa: E731
            for arr, an in zip((x, W, b), grads):
                worst[name] = max(worst[name], rel_err(an, central_diff(f, arr)))

        M, L, d, H = 3, 3, 4, 5
        x = rng.standard_normal((M, L, d))
        Wx, Uh, b = rng.standard_normal((d, 3 * H)) * 0.5, rng.standard_normal((H, 3 * H)) * 0.5, rng.standard_normal(3 * H) * 0.1
        dy = rng.standard_normal((M, H))
        grads = gru_sequence_backward(dy, gru_sequence_forward(x, Wx, Uh, b)[1], Wx, Uh)
        f = lambda: float(np.sum(gru_sequence_forward(x, Wx, Uh, b)[0] * dy))  # noqa: E731
        for arr, an in zip((x, Wx, Uh, b), grads[:4]):
            worst["gru"] = max(worst["gru"], rel_err(an, central_diff(f, arr)))

        v = rng.standard_normal((2, 12, 3))
        w_re, w_im = rng.standard_normal((4, 3, 3)), rng.standard_normal((4, 3, 3))
        dy = rng.standard_normal((2, 12, 3))
        grads = spectral_conv1d_backward(dy, spectral_conv1d_forward(v, w_re, w_im)[1])
        f = lambda: float(np.sum(spectral_conv1d_forward(v, w_re, w_im)[0] * dy))  # noqa: E731
        for arr, an in zip((v, w_re, w_im), grads):
            worst["spectral"] = max(worst["spectral"], rel_err(an, central_diff(f, arr)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (max rel err, 10 instances); {elapsed:.1f}s"
    assert acceptance(1, ok, detail)


# ---------------------------------------------------------------- 2

def test_2_spectral_core(acceptance):
    rng = np.random.default_rng(2)
    lengths = list(range(1, 65)) + [100, 127]
    round_trip = 0.0
    for n in lengths:
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        round_trip = max(round_trip, float(np.max(np.abs(idft(dft(x)) - x))))
    bluestein = 0.0
    for n in [n for n in lengths if n & (n - 1)]:
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ref = direct_dft(x)
        bluestein = max(bluestein, float(np.max(np.abs(_bluestein(x) - ref))), float(np.max(np.abs(dft(x) - ref))))
    trunc = 0.0
    for N, k in ((16, 5), (17, 4), (40, 21), (40, 11), (127, 48), (100, 48)):
        v = rng.standard_normal((2, N, 3))
        w_re = np.broadcast_to(np.eye(3), (k, 3, 3)).copy()
        out, _ = spectral_conv1d_forward(v, w_re, np.zeros_like(w_re))
        trunc = max(trunc, float(np.max(np.abs(out - lowpass(v, k)[0]))))
    ok = round_trip < 1e-10 and bluestein < 1e-9 and trunc < 1e-9
    assert acceptance(2, ok, f"round trip {round_trip:.1e}, Bluestein vs direct {bluestein:.1e}, "
                             f"identity spectral conv vs truncation {trunc:.1e}")


# ---------------------------------------------------------------- 3

def test_3_oracle_physics(acceptance):
    reach = rectangular_reach()
    Q0, slope = 80.0, 2e-4
    depth = brentq(lambda h: manning_discharge(h, 40.0, slope, 0.03) - Q0, 0.0, 100.0, xtol=1e-14)
    T = 600
    state = route_reach(reach, ForcingSeries(np.full(T, Q0), np.full(T, reach.z_bed[-1] + depth)))
    steady = float(np.max(np.abs(state.h[-1] - (reach.z_bed + depth)) / depth))

    reach = rectangular_reach(n_xs=15, length=20_000.0)
    t = np.arange(800, dtype=float)
    q_up = 20.0 + 180.0 * np.exp(-0.5 * ((t - 100.0) / 15.0) ** 2)
    q = route_reach(reach, ForcingSeries(q_up, np.full(800, reach.z_bed[-1] + 1.0))).q
    balance = abs(q[:, -1].sum() / q_up.sum() - 1.0)
    ok = steady < 1e-3 and balance < 0.02
    assert acceptance(3, ok, f"steady stage error {steady:.1e} of normal depth (tol 1e-3); "
                             f"pulse volume error {100 * balance:.3f}% (tol 2%)")


# ---------------------------------------------------------------- 4

@pytest.mark.slow
def test_4_end_to_end_skill(acceptance):
    corpus = standard_corpus(seed=7, n_xs=40, hours=2000)
    assert corpus.heldout_peak > corpus.train_peak

    def run(seed):
        r = evaluate_skill(corpus, seed, horizon=240, epochs=60, lr=2e-4, dtype="float32")
        median_xs = float(np.nanmedian(r.report.per_xs_nse["H"])) if r.report else float("nan")
        # the criterion is read at the middle section; the median over sections is a diagnostic
        ok = r.passed
        return ok, (f"val MSE {r.val_mse:.2e} vs persistence {r.persistence_mse:.2e}, "
                    f"mid-section stage NSE {r.gauge_nse:.3f}, median per-section NSE {median_xs:.3f}, "
                    f"abort {r.aborted}, fit {r.fit_seconds / 60:.1f} min")

    ok, outcomes = _majority(run)
    assert acceptance(4, ok, _fmt(outcomes))


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_5_feature_ablation_direction(acceptance):
    corpus = roughness_corpus(seed=7, n_xs=40, hours=2000)

    def run(seed):
        full, ablated = ablate_features(corpus, ("z_bank", "n_man"), seed, 240, **ABLATION)
        ok = full.aborted is None and ablated.stage_rmse > full.stage_rmse
        return ok, f"full {_arm(full, full.stage_rmse)}, ablated {_arm(ablated, ablated.stage_rmse)}"

    ok, outcomes = _majority(run)
    assert acceptance(5, ok, "stage RMSE " + _fmt(outcomes))


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_6_data_volume_ablation_direction(acceptance):
    corpus = extreme_event_corpus(seed=7, n_xs=40, hours=2000)

    def run(seed):
        arms = {a.arm: a for a in ablate_data_volume(corpus, seed=seed, horizon=240, **ABLATION)}
        inc, exc = arms["included"], arms["excluded"]
        ok = inc.aborted is None and inc.peak_stage_error_m <= exc.peak_stage_error_m
        return ok, (f"included {_arm(inc, inc.peak_stage_error_m)}, "
                    f"excluded {_arm(exc, exc.peak_stage_error_m)}")

    ok, outcomes = _majority(run)
    assert acceptance(6, ok, "peak-stage error " + _fmt(outcomes))


# ---------------------------------------------------------------- 7

def test_7_metric_exactness(acceptance):
    rng = np.random.default_rng(7)
    t = rng.normal(5.0, 2.0, 500)
    errs = [rmse(t, t), mae(t, t), abs(nse(t, t) - 1.0), abs(nse(np.full_like(t, t.mean()), t))]
    for b in (-3.0, 0.25, 11.0):
        errs += [abs(rmse(t + b, t) - abs(b)), abs(mae(t + b, t) - abs(b))]
    worst = max(errs)
    assert acceptance(7, worst < 1e-12, f"max deviation {worst:.1e} (tol 1e-12)")


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_8_benchmark_harness(acceptance, tmp_path):
    code = main(["bench", "--n-reaches", "5", "--out", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "benchmark.csv").open())) if code == 0 else []
    reach_rows = [r for r in rows if r["reach_id"] != "TOTAL"]
    total = [r for r in rows if r["reach_id"] == "TOTAL"]
    ok = code == 0 and len(reach_rows) >= 5 and len(total) == 1
    if ok:
        tot = total[0]
        ratio = float(tot["oracle_s"]) / float(tot["surrogate_s"])
        ok = abs(ratio - float(tot["speedup"])) < 1e-9 * ratio and (tmp_path / "benchmark.txt").exists()
        detail = (f"{len(reach_rows)} reaches; oracle {float(tot['oracle_s']):.3f}s, "
                  f"surrogate {float(tot['surrogate_s']):.3f}s, speedup {ratio:.2f}x (reported, not asserted)")
    else:
        detail = f"exit code {code}, {len(rows)} rows"
    assert acceptance(8, ok, detail)


# ---------------------------------------------------------------- 9

def test_9_determinism_and_persistence(acceptance, tmp_path, monkeypatch):
    spec = SyntheticSpec(seed=9, n_xs=10, length_m=10_000.0, duration_hours=300, event_count=2)
    reach = gen_synthetic_reach(spec)
    f = gen_synthetic_forcings(spec, reach)
    truth = route_reach(reach, f)
    X, y = build_dataset(reach, [(truth, f)])

    def train_and_roll():
        est = GRUGeoFNORegressor(hidden=12, max_modes=5, epochs=4, random_state=11).fit(X, y, x_coord=reach.x_coord)
        return est, rollout(est, reach, f, truth, 100)

    est_a, pred_a = train_and_roll()
    est_b, pred_b = train_and_roll()
    same_run = all(est_a.params_[k].tobytes() == est_b.params_[k].tobytes() for k in est_a.params_) and (
        pred_a.h.tobytes() == pred_b.h.tobytes() and pred_a.q.tobytes() == pred_b.q.tobytes()
    )

    path = tmp_path / "model.ckpt"
    ckpt = checkpoint_from_estimator(est_a, reach.id)
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    bit_exact = loaded == ckpt and all(loaded.params[k].tobytes() == ckpt.params[k].tobytes() for k in ckpt.params)
    again = rollout(estimator_from_checkpoint(loaded), reach, f, truth, 100)
    reloaded_same = again.h.tobytes() == pred_a.h.tobytes() and again.q.tobytes() == pred_a.q.tobytes()

    before = path.read_bytes()

    def interrupted(fd):
        raise KeyboardInterrupt

    monkeypatch.setattr(os, "fsync", interrupted)
    with pytest.raises(KeyboardInterrupt):
        save_checkpoint(path, checkpoint_from_estimator(est_b, "other"))
    monkeypatch.undo()
    atomic = path.read_bytes() == before and sorted(os.listdir(tmp_path)) == ["model.ckpt"]
    atomic = atomic and load_checkpoint(path) == ckpt
    monkeypatch.setattr(os, "replace", lambda *a: (_ for _ in ()).throw(OSError("power cut")))
    with pytest.raises(OSError):
        atomic_write(tmp_path / "new.bin", b"x" * 1000)
    monkeypatch.undo()
    atomic = atomic and sorted(os.listdir(tmp_path)) == ["model.ckpt"]

    ok = same_run and bit_exact and reloaded_same and atomic
    assert acceptance(9, ok, f"same-seed train+rollout identical {same_run}; checkpoint bit-exact {bit_exact}; "
                             f"reloaded rollout identical {reloaded_same}; interrupted writes clean {atomic}")
