"""Forecast skill metrics and per-reach evaluation reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .hydro import StateField
from .ingest import m_to_ft

__all__ = [
    "rmse",
    "mae",
    "nse",
    "MetricsReport",
    "evaluate_reach",
    "peak_stage_error",
    "error_quantiles",
]


def _pair(pred, true):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty series")
    return p, t


def rmse(pred, true) -> float:
    p, t = _pair(pred, true)
    return math.sqrt(float(np.mean((p - t) ** 2)))


def mae(pred, true) -> float:
    p, t = _pair(pred, true)
    return float(np.mean(np.abs(p - t)))


def nse(pred, true) -> float:
    """Nash-Sutcliffe efficiency; NaN when the truth is constant."""
    p, t = _pair(pred, true)
    denom = float(np.sum((t - t.mean()) ** 2))
    if denom == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((p - t) ** 2)) / denom


def error_quantiles(abs_err) -> dict[str, float]:
    e = np.asarray(abs_err, dtype=np.float64).ravel()
    return {"median": float(np.median(e)), "mean": float(e.mean()), "p90": float(np.quantile(e, 0.9))}


def peak_stage_error(pred: StateField, truth: StateField, xs: int, start: int = 0, stop: int | None = None) -> float:
    """|max predicted stage - max true stage| at section ``xs`` over hours [start, stop)."""
    if pred.h.shape != truth.h.shape:
        raise ValueError("prediction and truth differ in shape")
    sl = slice(start, stop)
    return abs(float(np.max(pred.h[sl, xs])) - float(np.max(truth.h[sl, xs])))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


@dataclass
class MetricsReport:
    reach_id: str
    n_steps: int
    n_xs: int
    variables: dict[str, dict[str, float]]
    per_xs_nse: dict[str, list[float]]
    stage_error_m: dict[str, float]
    stage_error_ft: dict[str, float]
    abs_stage_error: np.ndarray = field(repr=False, default=None)

    def summary_row(self) -> dict:
        return {
            "reach_id": self.reach_id,
            "n_steps": self.n_steps,
            "h_rmse_m": self.variables["H"]["rmse"],
            "h_mae_m": self.variables["H"]["mae"],
            "h_nse": self.variables["H"]["nse"],
            "q_rmse_m3s": self.variables["Q"]["rmse"],
            "q_nse": self.variables["Q"]["nse"],
            "median_abs_stage_err_ft": self.stage_error_ft["median"],
        }

    def to_dict(self) -> dict:
        return _clean({
            "reach_id": self.reach_id,
            "n_steps": self.n_steps,
            "n_xs": self.n_xs,
            "variables": self.variables,
            "per_xs_nse": self.per_xs_nse,
            "stage_abs_error_m": self.stage_error_m,
            "stage_abs_error_ft": self.stage_error_ft,
        })

    def to_json(self) -> str:
        # missing values (NaN NSE) are written as null
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def per_xs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["xs_index", "nse_h", "nse_q"])
        for i, (a, b) in enumerate(zip(self.per_xs_nse["H"], self.per_xs_nse["Q"])):
            w.writerow([i, "" if math.isnan(a) else repr(a), "" if math.isnan(b) else repr(b)])
        return buf.getvalue()

    def error_csv(self) -> str:
        """One row per (forecast hour, section) with the absolute stage error."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "xs_index", "abs_err_m", "abs_err_ft"])
        if self.abs_stage_error is not None:
            for (t, i), e in np.ndenumerate(self.abs_stage_error):
                w.writerow([t, i, repr(float(e)), repr(float(m_to_ft(e)))])
        return buf.getvalue()


def evaluate_reach(pred: StateField, truth: StateField, warmup: int = 12) -> MetricsReport:
    """Score a rollout against the truth, skipping the first ``warmup`` hours."""
    if pred.h.shape != truth.h.shape:
        raise ValueError(f"prediction {pred.h.shape} and truth {truth.h.shape} differ in shape")
    if not 0 <= warmup < pred.n_hours:
        raise ValueError(f"warmup {warmup} leaves no forecast hours out of {pred.n_hours}")
    ph, pq = pred.h[warmup:], pred.q[warmup:]
    th, tq = truth.h[warmup:], truth.q[warmup:]
    variables = {
        name: {"rmse": rmse(p, t), "mae": mae(p, t), "nse": nse(p, t)}
        for name, p, t in (("H", ph, th), ("Q", pq, tq))
    }
    N = pred.n_xs
    per_xs = {
        "H": [nse(ph[:, i], th[:, i]) for i in range(N)],
        "Q": [nse(pq[:, i], tq[:, i]) for i in range(N)],
    }
    err = np.abs(ph - th)
    q_m = error_quantiles(err)
    q_ft = {k: float(m_to_ft(v)) for k, v in q_m.items()}
    return MetricsReport(
        reach_id=truth.reach_id or pred.reach_id,
        n_steps=len(th),
        n_xs=N,
        variables=variables,
        per_xs_nse=per_xs,
        stage_error_m=q_m,
        stage_error_ft=q_ft,
        abs_stage_error=err,
    )
