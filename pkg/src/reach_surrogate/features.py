"""Eight-channel feature tensors, window slicing and channel normalisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .hydro import StateField
from .ingest import ForcingSeries

__all__ = [
    "CHANNELS",
    "DYNAMIC_CHANNELS",
    "channel_layout",
    "channel_index",
    "kept_channels",
    "build_frames",
    "build_window",
    "make_windows",
    "mode_count",
    "NormStats",
    "fit_norm_stats",
    "normalize",
    "denormalize",
    "ChannelScaler",
    "STD_FLOOR",
]

CHANNELS = ("H", "Q", "z_bed", "z_bank", "n_man", "x_coord", "Q_up", "H_dn")
DYNAMIC_CHANNELS = ("H", "Q")
STD_FLOOR = 1e-6


def channel_layout() -> tuple[str, ...]:
    return CHANNELS


def channel_index(name: str) -> int:
    try:
        return CHANNELS.index(name)
    except ValueError:
        raise ValueError(f"unknown channel {name!r}; expected one of {CHANNELS}") from None


def kept_channels(drop=()) -> tuple[str, ...]:
    """Channels remaining after removing ``drop``, in canonical order."""
    drop = set(drop or ())
    for name in drop:
        channel_index(name)
    bad = drop & set(DYNAMIC_CHANNELS)
    if bad:
        raise ValueError(f"dynamic channels {sorted(bad)} cannot be dropped")
    return tuple(c for c in CHANNELS if c not in drop)


def _frames(h, q, static4, q_up, h_dn) -> np.ndarray:
    T, N = h.shape
    if static4.shape != (N, 4):
        raise ValueError(f"static table must be [{N}, 4], got {static4.shape}")
    if len(q_up) < T:
        raise ValueError(f"forcings cover {len(q_up)} hours, state has {T}")
    frames = np.empty((T, N, 8))
    frames[..., 0] = h
    frames[..., 1] = q
    frames[..., 2:6] = static4
    frames[..., 6] = q_up[:T, None]
    frames[..., 7] = h_dn[:T, None]
    return frames


def build_frames(state: StateField, static4: np.ndarray, forcings: ForcingSeries) -> np.ndarray:
    """Per-hour feature frames [T, N, 8] in canonical channel order."""
    return _frames(state.h, state.q, static4, forcings.q_up, forcings.h_dn)


def build_window(state, static4, forcings, t_end: int, L: int = 12) -> np.ndarray:
    """Feature window [L, N, 8] covering hours ``t_end - L`` .. ``t_end - 1``.

    Static channels repeat along the time axis; the two forcing channels
    carry each hour's boundary values broadcast over all sections.
    """
    if t_end < L:
        raise ValueError(f"need {L} hours of history before t_end={t_end}")
    if t_end > state.n_hours or t_end > len(forcings):
        raise ValueError(f"window ending at hour {t_end} exceeds the available series")
    sl = slice(t_end - L, t_end)
    return _frames(state.h[sl], state.q[sl], static4, forcings.q_up[sl], forcings.h_dn[sl])


def make_windows(state, static4, forcings, L: int = 12, dtype=np.float64):
    """All one-step training samples of a series.

    Returns ``(X, y)`` with ``X`` [T - L, L, N, 8] and ``y`` [T - L, N, 2]
    where sample ``j`` ends at hour ``t_end = L + j`` and targets (H, Q) at
    ``t_end``.
    """
    T = state.n_hours
    if T < L + 1:
        raise ValueError(f"series of {T} hours is too short for windows of length {L}")
    frames = build_frames(state, static4, forcings).astype(dtype, copy=False)
    view = np.lib.stride_tricks.sliding_window_view(frames, L, axis=0)  # [T-L+1, N, 8, L]
    X = np.ascontiguousarray(view[: T - L].transpose(0, 3, 1, 2))
    y = np.stack([state.h[L:], state.q[L:]], axis=-1).astype(dtype)
    return X, y


def mode_count(n_xs: int, max_modes: int = 48) -> int:
    """Fourier modes kept for a reach of ``n_xs`` sections."""
    if n_xs < 3:
        raise ValueError("a reach needs at least 3 cross-sections")
    return min(max_modes, n_xs // 2 + 1)


# ---------------------------------------------------------------- normalisation

@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel mean and (floored) standard deviation, in physical units."""

    mean: np.ndarray
    std: np.ndarray
    channels: tuple[str, ...] = CHANNELS

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return (
            self.channels == other.channels
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def select(self, names) -> "NormStats":
        idx = [self.channels.index(n) for n in names]
        return NormStats(self.mean[idx], self.std[idx], tuple(names))


def fit_norm_stats(X, channels=CHANNELS) -> NormStats:
    """Statistics over every axis but the last (the channel axis)."""
    X = np.asarray(X)
    flat = X.reshape(-1, X.shape[-1]).astype(np.float64)
    mean, std = _moments(flat, STD_FLOOR)
    return NormStats(mean, std, tuple(channels))


def _moments(flat, floor):
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), floor)
    # exact centre for constant channels so they normalise to exactly zero
    const = np.all(flat == flat[0], axis=0)
    mean[const] = flat[0, const]
    return mean, std


def normalize(x, stats: NormStats | None):
    if stats is None:
        raise ValueError("normalisation statistics have not been fitted")
    return ((x - stats.mean) / stats.std).astype(np.asarray(x).dtype, copy=False)


def denormalize(x, stats: NormStats | None):
    if stats is None:
        raise ValueError("normalisation statistics have not been fitted")
    return (x * stats.std + stats.mean).astype(np.asarray(x).dtype, copy=False)


class ChannelScaler(TransformerMixin, BaseEstimator):
    """Zero-mean, unit-variance scaling along the trailing channel axis.

    Accepts arrays of any rank; statistics pool every leading axis.
    """

    def __init__(self, std_floor: float = STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, X.shape[-1])
        self.mean_, self.scale_ = _moments(flat, self.std_floor)
        self.n_features_in_ = X.shape[-1]
        return self

    @property
    def stats_(self) -> NormStats:
        check_is_fitted(self)
        names = CHANNELS if self.n_features_in_ == len(CHANNELS) else tuple(map(str, range(self.n_features_in_)))
        return NormStats(self.mean_, self.scale_, names)

    def transform(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} channels, got {X.shape[-1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self)
        return np.asarray(X, dtype=float) * self.scale_ + self.mean_
