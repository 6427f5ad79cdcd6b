"""Reference routing oracle and synthetic reach/forcing generators.

Discharge is routed cell to cell with variable-parameter Muskingum-Cunge
(coefficients recomputed every substep from the local kinematic celerity of
an equivalent rectangular channel). Stage is the Manning normal-depth stage,
nudged towards the downstream boundary stage over the last few
cross-sections to mimic backwater.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .ingest import CrossSection, ForcingSeries, Reach

__all__ = [
    "StateField",
    "SyntheticSpec",
    "OracleConfig",
    "OracleInstability",
    "NormalDepthError",
    "manning_discharge",
    "normal_depth",
    "channel_properties",
    "route_discharge",
    "route_reach",
    "normal_stage",
    "gen_synthetic_reach",
    "gen_synthetic_forcings",
    "parse_state_csv",
    "serialize_state_csv",
]


class OracleInstability(RuntimeError):
    pass


class NormalDepthError(ValueError):
    pass


@dataclass(eq=False)
class StateField:
    """Stage ``h`` and discharge ``q`` on a [T, N] grid of hours x cross-sections."""

    h: np.ndarray
    q: np.ndarray
    reach_id: str = ""
    dt: float = 3600.0
    t0: int = 0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.h.ndim != 2 or self.h.shape != self.q.shape:
            raise ValueError(f"h and q must be [T, N] of equal shape, got {self.h.shape} and {self.q.shape}")

    @property
    def n_hours(self) -> int:
        return self.h.shape[0]

    @property
    def n_xs(self) -> int:
        return self.h.shape[1]

    def slice(self, start: int, stop: int | None = None) -> "StateField":
        return StateField(self.h[start:stop], self.q[start:stop], self.reach_id, self.dt, self.t0 + start)

    def __eq__(self, other):
        if not isinstance(other, StateField):
            return NotImplemented
        return (
            self.reach_id == other.reach_id
            and self.t0 == other.t0
            and np.array_equal(self.h, other.h)
            and np.array_equal(self.q, other.q)
        )


def serialize_state_csv(state: StateField) -> str:
    out = ["hour,xs_index,h,q"]
    for t in range(state.n_hours):
        hour = state.t0 + t
        for i in range(state.n_xs):
            out.append(f"{hour},{i},{float(state.h[t, i])!r},{float(state.q[t, i])!r}")
    return "\n".join(out) + "\n"


def parse_state_csv(text: str, reach_id: str = "") -> StateField:
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if header != ["hour", "xs_index", "h", "q"]:
        raise ValueError(f"expected header 'hour,xs_index,h,q', got {','.join(header)!r}")
    rows = [r for r in reader if r]
    data = np.array(rows, dtype=float)
    if data.size == 0:
        raise ValueError("state file has no rows")
    hours = data[:, 0].astype(int)
    xs = data[:, 1].astype(int)
    t0 = int(hours.min())
    T = int(hours.max()) - t0 + 1
    N = int(xs.max()) + 1
    if len(rows) != T * N:
        raise ValueError(f"state file has {len(rows)} rows, expected a full {T}x{N} grid")
    h = np.full((T, N), np.nan)
    q = np.full((T, N), np.nan)
    h[hours - t0, xs] = data[:, 2]
    q[hours - t0, xs] = data[:, 3]
    if np.isnan(h).any() or np.isnan(q).any():
        raise ValueError("state file does not cover every (hour, xs) pair")
    return StateField(h, q, reach_id, t0=t0)


# ---------------------------------------------------------------- Manning

def _check_channel(width, slope, n):
    if np.any(np.asarray(width) <= 0):
        raise ValueError("channel width must be positive")
    if np.any(np.asarray(slope) <= 0):
        raise ValueError("bed slope must be positive")
    if np.any(np.asarray(n) <= 0):
        raise ValueError("Manning n must be positive")


def manning_discharge(depth, width, slope, n):
    """Manning discharge of a rectangular section, ``(1/n) A R^(2/3) S^(1/2)``."""
    _check_channel(width, slope, n)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth < 0):
        raise ValueError("depth must be non-negative")
    area = width * depth
    radius = area / (width + 2.0 * depth)
    q = area * radius ** (2.0 / 3.0) * np.sqrt(slope) / n
    return q if q.ndim else float(q)


def normal_depth(q, width, slope, n, d_max: float = 1000.0, rtol: float = 1e-12):
    """Depth at which Manning discharge equals ``q``, by bracketed bisection.

    The upper bracket starts at 1 m and doubles until it carries ``q``;
    :class:`NormalDepthError` is raised if that needs more than ``d_max``.
    Works elementwise on broadcastable arrays.
    """
    _check_channel(width, slope, n)
    q, width, slope, n = np.broadcast_arrays(
        np.asarray(q, dtype=float), np.asarray(width, float), np.asarray(slope, float), np.asarray(n, float)
    )
    if np.any(q < 0):
        raise ValueError("discharge must be non-negative")
    scalar = q.ndim == 0
    q, width, slope, n = (np.atleast_1d(a).astype(float) for a in (q, width, slope, n))
    lo = np.zeros_like(q)
    hi = np.ones_like(q)
    while True:
        short = manning_discharge(hi, width, slope, n) < q
        if not short.any():
            break
        if np.any(hi[short] >= d_max):
            raise NormalDepthError(f"discharge {q[short].max():.6g} exceeds capacity at depth {d_max} m")
        hi[short] = np.minimum(hi[short] * 2.0, d_max)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = manning_discharge(mid, width, slope, n) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    d = 0.5 * (lo + hi)
    d[q == 0] = 0.0
    return float(d[0]) if scalar else d


# ---------------------------------------------------------------- routing

@dataclass(frozen=True)
class OracleConfig:
    """Routing options. ``None`` picks the automatic value."""

    substeps: int | None = None
    backwater_xs: int | None = None
    slope_floor: float = 1e-5


def channel_properties(reach: Reach, slope_floor: float = 1e-5):
    """Equivalent rectangular width, bed slope and roughness per cross-section."""
    z = reach.z_bed
    x = reach.chainage
    seg = np.maximum((z[:-1] - z[1:]) / np.diff(x), slope_floor)
    slope = np.empty(reach.n_xs)
    slope[0] = seg[0]
    slope[-1] = seg[-1]
    slope[1:-1] = 0.5 * (seg[:-1] + seg[1:])
    return reach.width, slope, reach.manning_n


def _celerity(q, width, slope, n):
    # wide-channel kinematic celerity c = 5/3 * v
    d = (q * n / (width * math.sqrt(slope))) ** 0.6
    return 5.0 * q / (3.0 * width * d)


def _auto_substeps(reach, q_max, width, slope, n):
    dx = np.diff(reach.chainage)
    seg_w = 0.5 * (width[:-1] + width[1:])
    seg_s = 0.5 * (slope[:-1] + slope[1:])
    seg_n = 0.5 * (n[:-1] + n[1:])
    if q_max <= 0:
        return 1
    c = np.array([_celerity(q_max, w, s, m) for w, s, m in zip(seg_w, seg_s, seg_n)])
    return max(1, int(math.ceil(np.max(c * 3600.0 / dx))))


def route_discharge(reach: Reach, q_up, config: OracleConfig | None = None) -> np.ndarray:
    """Route an upstream hydrograph through the reach; returns q [T, N]."""
    config = config or OracleConfig()
    q_up = np.asarray(q_up, dtype=float)
    width, slope, n = channel_properties(reach, config.slope_floor)
    N = reach.n_xs
    T = len(q_up)
    ns = config.substeps or _auto_substeps(reach, float(q_up.max()), width, slope, n)
    dt = 3600.0 / ns
    dx = np.diff(reach.chainage).tolist()
    seg_w = (0.5 * (width[:-1] + width[1:])).tolist()
    seg_s = (0.5 * (slope[:-1] + slope[1:])).tolist()
    seg_n = (0.5 * (n[:-1] + n[1:])).tolist()
    # celerity and diffusion factors that only depend on the segment
    cel_a = [(m / (w * math.sqrt(s))) ** 0.6 for w, s, m in zip(seg_w, seg_s, seg_n)]
    diff_a = [1.0 / (2.0 * w * s * L) for w, s, L in zip(seg_w, seg_s, dx)]

    out = np.empty((T, N))
    Q = [float(q_up[0])] * N
    out[0] = Q
    for t in range(1, T):
        q_prev_in = float(q_up[t - 1])
        dq_in = (float(q_up[t]) - q_prev_in) / ns
        for s_idx in range(1, ns + 1):
            new = [q_prev_in + s_idx * dq_in]
            for i in range(N - 1):
                qi_new = new[i]
                qi_old = Q[i]
                qj_old = Q[i + 1]
                qref = (qi_new + qi_old + qj_old) / 3.0
                if qref <= 1e-9:
                    new.append(max(qj_old, 0.0))
                    continue
                w = seg_w[i]
                depth = cel_a[i] * qref**0.6
                c = 5.0 * qref / (3.0 * w * depth)
                K = dx[i] / c
                X = 0.5 - qref * diff_a[i] / c
                if X < 0.0:
                    X = 0.0
                denom = 2.0 * K * (1.0 - X) + dt
                val = ((dt - 2.0 * K * X) * qi_new + (dt + 2.0 * K * X) * qi_old
                       + (2.0 * K * (1.0 - X) - dt) * qj_old) / denom
                new.append(val if val > 0.0 else 0.0)
            Q = new
        out[t] = Q
    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out))[0, 0])
        raise OracleInstability(f"non-finite discharge at hour {bad}")
    return out


def backwater_weights(n_xs: int, backwater_xs: int | None = None) -> np.ndarray:
    """Linear weights, 1 at the outlet falling to 0 ``B`` sections upstream."""
    B = backwater_xs if backwater_xs is not None else max(3, n_xs // 5)
    w = np.zeros(n_xs)
    j = np.arange(min(B, n_xs))
    w[n_xs - 1 - j] = 1.0 - j / B
    return w


def normal_stage(reach: Reach, q, slope_floor: float = 1e-5) -> np.ndarray:
    """Bed elevation plus normal depth for discharge ``q`` [..., N]."""
    width, slope, n = channel_properties(reach, slope_floor)
    return reach.z_bed + normal_depth(q, width, slope, n)


def route_reach(reach: Reach, forcings: ForcingSeries, config: OracleConfig | None = None) -> StateField:
    """Generate the ground-truth (H, Q) field for ``reach`` under ``forcings``."""
    config = config or OracleConfig()
    z_out = reach.z_bed[-1]
    if np.any(forcings.h_dn < z_out):
        raise ValueError("downstream stage falls below the outlet bed elevation")
    q = route_discharge(reach, forcings.q_up, config)
    h_norm = normal_stage(reach, q, config.slope_floor)
    anomaly = forcings.h_dn - h_norm[:, -1]
    h = h_norm + anomaly[:, None] * backwater_weights(reach.n_xs, config.backwater_xs)
    h = np.maximum(h, reach.z_bed)
    h[:, -1] = forcings.h_dn
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(q))):
        raise OracleInstability("non-finite stage produced")
    return StateField(h, q, reach.id, forcings.dt, forcings.t0)


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 7
    n_xs: int = 40
    length_m: float = 40_000.0
    slope: float = 2e-4
    base_width_m: float = 50.0
    manning_range: tuple[float, float] = (0.025, 0.045)
    event_count: int = 3
    peak_range_m3s: tuple[float, float] = (100.0, 250.0)
    duration_hours: int = 2000
    base_flow_m3s: float = 30.0
    bank_height_range_m: tuple[float, float] = (4.5, 6.5)
    width_jitter: float = 0.1
    stage_noise_m: float = 0.1
    ascending_peaks: bool = False
    reach_id: str = "synthetic"

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("slope must be positive")
        lo, hi = self.manning_range
        if not (0 < lo <= hi <= 0.2):
            raise ValueError("manning_range must lie inside (0, 0.2]")
        if self.duration_hours < 13:
            raise ValueError("duration_hours must be at least 13")
        if self.n_xs < 3:
            raise ValueError("need at least 3 cross-sections")

    def replace(self, **changes) -> "SyntheticSpec":
        return replace(self, **changes)


def gen_synthetic_reach(spec: SyntheticSpec) -> Reach:
    """Trapezoid-like cross-sections with jittered spacing, slope, width and roughness."""
    rng = np.random.default_rng([spec.seed, 0])
    N = spec.n_xs
    gaps = rng.uniform(0.7, 1.3, N - 1)
    gaps *= spec.length_m / gaps.sum()
    chainage = np.concatenate([[0.0], np.cumsum(gaps)])
    drops = gaps * spec.slope * rng.uniform(0.8, 1.2, N - 1)
    z_bed = 10.0 + np.concatenate([np.cumsum(drops[::-1])[::-1], [0.0]])
    widths = spec.base_width_m * (1.0 + spec.width_jitter * rng.uniform(-1.0, 1.0, N))
    n_vals = rng.uniform(*spec.manning_range, N)
    bank_h = rng.uniform(*spec.bank_height_range_m, (N, 2))
    sections = []
    for i in range(N):
        zb, W = float(z_bed[i]), float(widths[i])
        hl, hr = bank_h[i]
        left = 10.0
        right = left + W
        profile = (
            (0.0, zb + hl + 1.0),
            (left, zb + hl),
            (left + 0.15 * W, zb + 0.2),
            (left + 0.5 * W, zb),
            (left + 0.85 * W, zb + 0.2),
            (right, zb + hr),
            (right + 10.0, zb + hr + 1.0),
        )
        sections.append(CrossSection(float(chainage[i]), profile, left, right, float(n_vals[i])))
    return Reach(spec.reach_id, tuple(sections))


def _pulse(t, tp, shape=4.0):
    tau = np.clip(t / tp, 0.0, None)
    return tau**shape * np.exp(shape * (1.0 - tau))


def gen_synthetic_forcings(
    spec: SyntheticSpec, reach: Reach, config: OracleConfig | None = None
) -> ForcingSeries:
    """Base flow plus ``event_count`` gamma-shaped flood pulses, one per time slot.

    The downstream stage follows the normal stage of the routed outlet
    discharge plus a slow sinusoidal perturbation.
    """
    rng = np.random.default_rng([spec.seed, 1])
    T = spec.duration_hours
    t = np.arange(T, dtype=float)
    q = np.full(T, spec.base_flow_m3s)
    E = spec.event_count
    peaks = rng.uniform(*spec.peak_range_m3s, E)
    if spec.ascending_peaks:
        peaks = np.sort(peaks)
    slot = T / max(E, 1)
    for k in range(E):
        tp = float(np.clip(rng.uniform(0.08, 0.15) * slot, 3.0, 72.0))
        start = k * slot + rng.uniform(0.0, 0.2) * slot
        q += (peaks[k] - spec.base_flow_m3s) * _pulse(t - start, tp)
    q_out = route_discharge(reach, q, config)[:, -1]
    z_out = reach.z_bed[-1]
    width, slope, n = channel_properties(reach, (config or OracleConfig()).slope_floor)
    h_dn = z_out + normal_depth(q_out, width[-1], slope[-1], n[-1])
    periods = rng.uniform(150.0, 600.0, 3)
    phases = rng.uniform(0.0, 2 * np.pi, 3)
    noise = sum(np.sin(2 * np.pi * t / p + ph) for p, ph in zip(periods, phases)) * (spec.stage_noise_m / 3.0)
    h_dn = np.maximum(h_dn + noise, z_out + 0.05)
    return ForcingSeries(q, h_dn)
