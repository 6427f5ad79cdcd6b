"""Desk-scale experiment protocols on synthetic reaches.

Covers the standard train/held-out corpus, the one-step persistence
comparison, closed-loop skill on a flood event, the feature and data-volume
ablations and the oracle-vs-surrogate wall-clock benchmark.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .estimator import GRUGeoFNORegressor, build_dataset
from .hydro import OracleConfig, StateField, SyntheticSpec, gen_synthetic_forcings, gen_synthetic_reach, route_reach
from .ingest import ForcingSeries, Reach
from .metrics import MetricsReport, evaluate_reach, nse, peak_stage_error
from .rollout import RolloutConfig, rollout
from .training import persistence_mse, split_train_val

__all__ = [
    "Corpus",
    "synthetic_year",
    "standard_corpus",
    "roughness_corpus",
    "extreme_event_corpus",
    "event_window",
    "gauge_index",
    "make_estimator",
    "one_step_comparison",
    "event_rollout",
    "SkillResult",
    "evaluate_skill",
    "ablate_features",
    "ablate_data_volume",
    "ArmResult",
    "benchmark",
    "BenchmarkTable",
]

HORIZON = 240
# hours of the rollout spent before the gauge peak
EVENT_LEAD = 72


@dataclass
class Corpus:
    reach: Reach
    train: list[tuple[StateField, ForcingSeries]]
    heldout: tuple[StateField, ForcingSeries]
    spec: SyntheticSpec

    @property
    def train_peak(self) -> float:
        return max(float(f.q_up.max()) for _, f in self.train)

    @property
    def heldout_peak(self) -> float:
        return float(self.heldout[1].q_up.max())


def synthetic_year(spec: SyntheticSpec, reach: Reach, seed: int, oracle: OracleConfig | None = None, **changes):
    """One year of forcings drawn with ``seed`` and the oracle's response to them."""
    forcings = gen_synthetic_forcings(spec.replace(seed=seed, **changes), reach, oracle)
    return route_reach(reach, forcings, oracle), forcings


def _heldout_range(spec: SyntheticSpec) -> tuple[float, float]:
    # every held-out event exceeds the largest peak the training years can draw
    hi = spec.peak_range_m3s[1]
    return 1.04 * hi, 1.28 * hi


def standard_corpus(seed: int = 7, n_xs: int = 40, hours: int = 2000, spec: SyntheticSpec | None = None,
                    oracle: OracleConfig | None = None, years: int = 2) -> Corpus:
    """``years`` training years (two by default) and one held-out year with a larger flood.

    The reach comes from ``seed``; year ``k`` uses forcing seed
    ``100 * seed + k``.
    """
    spec = spec or SyntheticSpec(seed=seed, n_xs=n_xs, duration_hours=hours)
    reach = gen_synthetic_reach(spec)
    train = [synthetic_year(spec, reach, 100 * spec.seed + k, oracle) for k in range(years)]
    heldout = synthetic_year(spec, reach, 100 * spec.seed + years, oracle, peak_range_m3s=_heldout_range(spec))
    return Corpus(reach, train, heldout, spec)


def roughness_corpus(seed: int = 7, n_xs: int = 40, hours: int = 2000) -> Corpus:
    """Standard corpus on a reach whose Manning's n is drawn per section from (0.02, 0.10)."""
    spec = SyntheticSpec(seed=seed, n_xs=n_xs, duration_hours=hours, manning_range=(0.02, 0.10),
                         reach_id="rough")
    return standard_corpus(spec=spec)


def extreme_event_corpus(seed: int = 7, n_xs: int = 40, hours: int = 2000) -> Corpus:
    """Corpus whose largest training flood sits in the final fifth of the data.

    Year 2 has ascending peaks drawn from a higher range, so its last event
    tops everything before it and lands in the temporal validation split.
    """
    spec = SyntheticSpec(seed=seed, n_xs=n_xs, duration_hours=hours, peak_range_m3s=(100.0, 200.0),
                         reach_id="extreme")
    reach = gen_synthetic_reach(spec)
    train = [
        synthetic_year(spec, reach, 100 * seed),
        synthetic_year(spec, reach, 100 * seed + 1, peak_range_m3s=(150.0, 260.0), ascending_peaks=True),
    ]
    heldout = synthetic_year(spec, reach, 100 * seed + 2, peak_range_m3s=(270.0, 330.0))
    return Corpus(reach, train, heldout, spec)


def gauge_index(reach: Reach) -> int:
    return reach.n_xs // 2


def event_window(truth: StateField, xs: int, horizon: int = HORIZON, warmup: int = 12,
                 lead: int = EVENT_LEAD) -> int:
    """Start hour of a ``warmup + horizon`` window placed ``lead`` hours before the stage peak at ``xs``."""
    total = warmup + horizon
    if truth.n_hours < total:
        raise ValueError(f"series of {truth.n_hours} hours is shorter than {total}")
    peak = int(np.argmax(truth.h[:, xs]))
    return int(np.clip(peak - lead - warmup, 0, truth.n_hours - total))


def make_estimator(seed: int = 0, **overrides) -> GRUGeoFNORegressor:
    params = dict(random_state=seed)
    params.update(overrides)
    return GRUGeoFNORegressor(**params)


def one_step_comparison(est: GRUGeoFNORegressor, X, y) -> tuple[float, float]:
    """(model MSE, persistence MSE) on the estimator's validation split, normalised space."""
    _, val = split_train_val(np.arange(len(X)), est.val_fraction)
    if len(val) == 0:
        raise ValueError("the estimator was fitted without a validation split")
    Xn = est.transform_windows(X[val])
    yn = est.scale_targets(y[val])
    pred = est.predict_normalized(Xn)
    return float(np.mean((pred - yn) ** 2)), persistence_mse(Xn, yn)


def event_rollout(est, corpus: Corpus, horizon: int = HORIZON, mask=None):
    """Roll out over the held-out flood; returns (prediction, truth window, start hour)."""
    state, forcings = corpus.heldout
    L = est.seq_len
    start = event_window(state, gauge_index(corpus.reach), horizon, L)
    truth = state.slice(start, start + L + horizon)
    f = forcings.slice(start, start + L + horizon)
    cfg = RolloutConfig(horizon=horizon, warmup=L, reach_id=corpus.reach.id, ablation_mask=mask)
    return rollout(est, corpus.reach, f, truth, horizon, cfg), truth, start


@dataclass
class SkillResult:
    seed: int
    val_mse: float
    persistence_mse: float
    gauge_nse: float
    aborted: str | None
    fit_seconds: float
    report: MetricsReport | None = None

    @property
    def beats_persistence(self) -> bool:
        return self.val_mse < self.persistence_mse

    @property
    def passed(self) -> bool:
        return self.beats_persistence and self.aborted is None and self.gauge_nse > 0.8


def evaluate_skill(corpus: Corpus, seed: int, horizon: int = HORIZON, **est_params) -> SkillResult:
    """Train on the corpus, compare with persistence and roll out over the held-out flood."""
    from .rollout import RolloutInstability

    X, y = build_dataset(corpus.reach, corpus.train, est_params.get("seq_len", 12))
    est = make_estimator(seed, **est_params)
    t0 = time.perf_counter()
    est.fit(X, y, x_coord=corpus.reach.x_coord)
    fit_s = time.perf_counter() - t0
    val_mse, pers = one_step_comparison(est, X, y)
    try:
        pred, truth, _ = event_rollout(est, corpus, horizon)
    except RolloutInstability as exc:
        return SkillResult(seed, val_mse, pers, float("nan"), str(exc), fit_s)
    g = gauge_index(corpus.reach)
    L = est.seq_len
    return SkillResult(seed, val_mse, pers, nse(pred.h[L:, g], truth.h[L:, g]), None, fit_s,
                       evaluate_reach(pred, truth, L))


# ---------------------------------------------------------------- ablations

@dataclass
class ArmResult:
    """One trained arm of an ablation, scored on the held-out flood.

    An arm whose rollout aborts has no report; its errors are infinite, so
    it loses every comparison it takes part in.
    """

    arm: str
    report: MetricsReport | None
    peak_stage_error_m: float
    val_fraction: float | None = None
    aborted: str | None = None

    @property
    def stage_rmse(self) -> float:
        return float("inf") if self.report is None else self.report.variables["H"]["rmse"]

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "val_fraction": self.val_fraction,
            "aborted": self.aborted,
            "stage_rmse_m": None if self.report is None else self.stage_rmse,
            "peak_stage_error_m": None if self.report is None else self.peak_stage_error_m,
            "report": None if self.report is None else self.report.to_dict(),
        }


def _score_arm(name: str, est, corpus: Corpus, horizon: int, mask=None, val_fraction=None) -> ArmResult:
    from .rollout import RolloutInstability

    try:
        pred, truth, _ = event_rollout(est, corpus, horizon, mask=mask)
    except RolloutInstability as exc:
        return ArmResult(name, None, float("inf"), val_fraction, str(exc))
    L = est.seq_len
    return ArmResult(name, evaluate_reach(pred, truth, L),
                     peak_stage_error(pred, truth, gauge_index(corpus.reach), L), val_fraction)


def ablate_features(corpus: Corpus, channels_to_drop, seed: int = 0, horizon: int = HORIZON,
                    **est_params) -> tuple[ArmResult, ArmResult]:
    """Train the full and the channel-masked model with the same seed; return both scored arms."""
    drop = tuple(channels_to_drop)
    X, y = build_dataset(corpus.reach, corpus.train, est_params.get("seq_len", 12))
    arms = []
    for name, mask in (("full", ()), ("ablated", drop)):
        est = make_estimator(seed, drop_channels=mask, **est_params)
        est.fit(X, y, x_coord=corpus.reach.x_coord)
        arms.append(_score_arm(name, est, corpus, horizon, mask=mask))
    return arms[0], arms[1]


def ablate_data_volume(corpus: Corpus, arms=(("excluded", 0.2), ("included", 0.0)), seed: int = 0,
                       horizon: int = HORIZON, **est_params) -> list[ArmResult]:
    """Train one model per ``(name, val_fraction)`` arm and score each on the held-out flood.

    With the largest training flood in the final fifth of the corpus, a 0.2
    temporal validation split withholds it from training while 0.0 trains
    on everything. All arms share the same evaluation window.
    """
    X, y = build_dataset(corpus.reach, corpus.train, est_params.get("seq_len", 12))
    out = []
    for name, frac in arms:
        est = make_estimator(seed, val_fraction=frac, **est_params)
        est.fit(X, y, x_coord=corpus.reach.x_coord)
        out.append(_score_arm(name, est, corpus, horizon, val_fraction=frac))
    return out


# ---------------------------------------------------------------- benchmark

@dataclass
class BenchmarkTable:
    rows: list[dict] = field(default_factory=list)

    @property
    def oracle_total(self) -> float:
        return sum(r["oracle_s"] for r in self.rows)

    @property
    def surrogate_total(self) -> float:
        return sum(r["surrogate_s"] for r in self.rows)

    @property
    def speedup(self) -> float:
        return self.oracle_total / self.surrogate_total

    def _records(self):
        recs = [dict(r, speedup=r["oracle_s"] / r["surrogate_s"]) for r in self.rows]
        recs.append({"reach_id": "TOTAL", "n_xs": sum(r["n_xs"] for r in self.rows),
                     "horizon": sum(r["horizon"] for r in self.rows), "oracle_s": self.oracle_total,
                     "surrogate_s": self.surrogate_total, "speedup": self.speedup})
        return recs

    _FIELDS = ("reach_id", "n_xs", "horizon", "oracle_s", "surrogate_s", "speedup")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self._FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self._records():
            w.writerow({k: r[k] for k in self._FIELDS})
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [list(self._FIELDS)]
        for r in self._records():
            cells.append([
                str(r["reach_id"]), str(r["n_xs"]), str(r["horizon"]),
                f"{r['oracle_s']:.4f}", f"{r['surrogate_s']:.4f}", f"{r['speedup']:.2f}x",
            ])
        widths = [max(len(row[i]) for row in cells) for i in range(len(self._FIELDS))]
        lines = []
        for j, row in enumerate(cells):
            lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def benchmark(cases, horizon: int, oracle: OracleConfig | None = None) -> BenchmarkTable:
    """Time the oracle and the surrogate over the same ``horizon`` on each case.

    ``cases`` yields ``(reach, forcings, warmup_truth, model)``. The oracle
    routes ``L + horizon`` hours; the surrogate rolls out ``horizon`` hours
    after the same ``L``-hour warmup.
    """
    table = BenchmarkTable()
    for reach, forcings, warmup, model in cases:
        L = model.seq_len
        f = forcings.slice(0, L + horizon)
        t0 = time.perf_counter()
        route_reach(reach, f, oracle)
        t1 = time.perf_counter()
        rollout(model, reach, f, warmup, horizon)
        t2 = time.perf_counter()
        table.rows.append({"reach_id": reach.id, "n_xs": reach.n_xs, "horizon": horizon,
                           "oracle_s": t1 - t0, "surrogate_s": t2 - t1})
    return table
