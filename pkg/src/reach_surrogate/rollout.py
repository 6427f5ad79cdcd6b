"""Closed-loop (autoregressive) forecasting with a fitted surrogate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .features import CHANNELS, kept_channels
from .hydro import StateField
from .ingest import ForcingSeries, Reach, static_features

__all__ = ["RolloutConfig", "RolloutInstability", "MaskMismatch", "rollout", "STAGE_MARGIN_M"]

# a predicted stage this far above the lowest bank top is treated as blown up
STAGE_MARGIN_M = 10.0


class RolloutInstability(RuntimeError):
    """A rollout produced a non-finite or physically absurd state."""

    def __init__(self, step: int, reason: str):
        self.step = step
        super().__init__(f"rollout unstable at step {step}: {reason}")


class MaskMismatch(ValueError):
    """The model was trained with a different channel mask than requested."""


@dataclass(frozen=True)
class RolloutConfig:
    horizon: int
    warmup: int = 12
    reach_id: str = ""
    ablation_mask: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")


def _check_mask(model, mask):
    if mask is None:
        return
    expected = kept_channels(mask)
    if tuple(model.channels_) != expected:
        dropped = tuple(c for c in CHANNELS if c not in model.channels_)
        raise MaskMismatch(
            f"model was trained without {list(dropped)}, rollout requested without {sorted(mask)}"
        )


def rollout(model, reach: Reach, forcings: ForcingSeries, truth_warmup: StateField, horizon: int,
            config: RolloutConfig | None = None, callback=None) -> StateField:
    """Forecast ``horizon`` hours after ``L`` hours of true history.

    Every step builds a window from the rolling (H, Q) history (truth for
    the warmup, the model's own predictions afterwards), the static geometry
    and the *true* boundary forcings, then appends the next-hour prediction.
    ``callback(step, window)`` sees each raw window before the forward pass.

    The result holds the ``L`` warmup rows followed by ``horizon`` predicted
    rows.
    """
    check_is_fitted(model, "params_")
    L = model.seq_len
    config = config or RolloutConfig(horizon=horizon, warmup=L, reach_id=reach.id)
    if config.horizon != horizon:
        raise ValueError("horizon disagrees with the rollout configuration")
    if config.warmup != L:
        raise ValueError(f"model needs a warmup of {L} hours, configuration says {config.warmup}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    _check_mask(model, config.ablation_mask)
    N = reach.n_xs
    if N != model.n_xs_:
        raise ValueError(f"model was fitted on {model.n_xs_} cross-sections, reach has {N}")
    if truth_warmup.n_xs != N or truth_warmup.n_hours < L:
        raise ValueError(f"warmup must cover {L} hours at {N} cross-sections")
    T = L + horizon
    if len(forcings) < T:
        raise ValueError(f"forcings cover {len(forcings)} hours, rollout needs {T}")

    static4 = static_features(reach)
    frames = np.empty((T, N, len(CHANNELS)))
    frames[:L, :, 0] = truth_warmup.h[:L]
    frames[:L, :, 1] = truth_warmup.q[:L]
    frames[:, :, 2:6] = static4
    frames[:, :, 6] = forcings.q_up[:T, None]
    frames[:, :, 7] = forcings.h_dn[:T, None]

    ceiling = reach.z_bank + STAGE_MARGIN_M
    for step in range(horizon):
        t = L + step
        window = frames[t - L : t]
        if callback is not None:
            callback(step, window.copy())
        xn = model.transform_windows(window[None])
        out = model.predict_normalized(xn)[0].astype(np.float64)
        pred = out * model.norm_stats_.std[:2] + model.norm_stats_.mean[:2]
        if not np.all(np.isfinite(pred)):
            raise RolloutInstability(step, "non-finite prediction")
        if np.any(pred[:, 0] > ceiling):
            xs = int(np.argmax(pred[:, 0] - ceiling))
            raise RolloutInstability(step, f"stage {pred[xs, 0]:.2f} m exceeds bank + {STAGE_MARGIN_M:g} m at xs {xs}")
        frames[t, :, :2] = pred
    return StateField(frames[:, :, 0].copy(), frames[:, :, 1].copy(), reach_id=reach.id,
                      dt=truth_warmup.dt, t0=truth_warmup.t0)
