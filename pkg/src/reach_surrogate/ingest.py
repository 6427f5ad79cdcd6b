"""Reach geometry and boundary forcing readers/writers.

Geometry files are line oriented::

    REACH: demo
    UNITS: SI            # or US (feet)
    XS 0.0               # chainage, downstream distance
    N 0.035              # Manning roughness of the main channel
    BANKS 10.0 60.0      # left / right bank stations
    PROFILE
    0.0 25.0             # station elevation
    ...
    END

Forcing files are CSV with header ``hour,q_up,h_dn`` and hours 0, 1, 2, ...
Everything is held in SI internally.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FT_TO_M",
    "ft_to_m",
    "m_to_ft",
    "CrossSection",
    "Reach",
    "ForcingSeries",
    "GeometryError",
    "ForcingError",
    "parse_geometry",
    "serialize_geometry",
    "parse_forcings",
    "serialize_forcings",
    "static_features",
    "STATIC_CHANNELS",
    "MIN_SERIES_LENGTH",
]

FT_TO_M = 0.3048
MIN_SERIES_LENGTH = 13  # one 12-hour window plus its target
STATIC_CHANNELS = ("z_bed", "z_bank", "n_man", "x_coord")


def ft_to_m(value):
    return value * FT_TO_M


def m_to_ft(value):
    return value / FT_TO_M


class GeometryError(ValueError):
    """Malformed or physically inconsistent geometry input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ForcingError(ValueError):
    """Malformed boundary forcing input."""


@dataclass(frozen=True)
class CrossSection:
    chainage: float
    profile: tuple[tuple[float, float], ...]
    bank_left: float
    bank_right: float
    manning_n: float

    def __post_init__(self):
        # plain floats keep equality, hashing and text output independent of numpy scalar types
        object.__setattr__(self, "profile", tuple((float(s), float(z)) for s, z in self.profile))
        for name in ("chainage", "bank_left", "bank_right", "manning_n"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if len(self.profile) < 2:
            raise GeometryError(f"XS {self.chainage}: profile needs at least 2 points")
        stations = [s for s, _ in self.profile]
        if any(b <= a for a, b in zip(stations, stations[1:])):
            raise GeometryError(f"XS {self.chainage}: profile stations must be strictly increasing")
        if not self.bank_left < self.bank_right:
            raise GeometryError(f"XS {self.chainage}: left bank must be left of right bank")
        if self.bank_left < stations[0] or self.bank_right > stations[-1]:
            raise GeometryError(f"XS {self.chainage}: bank stations outside profile range")
        if not 0.0 < self.manning_n <= 0.2:
            raise GeometryError(f"XS {self.chainage}: Manning n {self.manning_n} outside (0, 0.2]")

    @property
    def stations(self) -> np.ndarray:
        return np.array([s for s, _ in self.profile])

    @property
    def elevations(self) -> np.ndarray:
        return np.array([z for _, z in self.profile])

    @property
    def z_bed(self) -> float:
        """Thalweg: lowest profile elevation."""
        return min(z for _, z in self.profile)

    def elevation_at(self, station: float) -> float:
        return float(np.interp(station, self.stations, self.elevations))

    @property
    def z_bank(self) -> float:
        """Bank-top: the lower of the two bank elevations."""
        return min(self.elevation_at(self.bank_left), self.elevation_at(self.bank_right))

    @property
    def width(self) -> float:
        """Equivalent rectangular channel width (bank to bank)."""
        return self.bank_right - self.bank_left


@dataclass(frozen=True)
class Reach:
    id: str
    cross_sections: tuple[CrossSection, ...]

    def __post_init__(self):
        if len(self.cross_sections) < 3:
            raise GeometryError(f"reach {self.id!r} needs at least 3 cross-sections")
        ch = [xs.chainage for xs in self.cross_sections]
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise GeometryError(f"reach {self.id!r}: chainage must increase strictly downstream")

    @property
    def n_xs(self) -> int:
        return len(self.cross_sections)

    @property
    def chainage(self) -> np.ndarray:
        return np.array([xs.chainage for xs in self.cross_sections])

    @property
    def x_coord(self) -> np.ndarray:
        ch = self.chainage
        x = (ch - ch[0]) / (ch[-1] - ch[0])
        x[0], x[-1] = 0.0, 1.0
        return x

    @property
    def z_bed(self) -> np.ndarray:
        return np.array([xs.z_bed for xs in self.cross_sections])

    @property
    def z_bank(self) -> np.ndarray:
        return np.array([xs.z_bank for xs in self.cross_sections])

    @property
    def manning_n(self) -> np.ndarray:
        return np.array([xs.manning_n for xs in self.cross_sections])

    @property
    def width(self) -> np.ndarray:
        return np.array([xs.width for xs in self.cross_sections])


@dataclass(frozen=True, eq=False)
class ForcingSeries:
    """Hourly boundary forcings. ``t0`` is the hour index of the first row."""

    q_up: np.ndarray
    h_dn: np.ndarray
    t0: int = 0
    dt: float = field(default=3600.0)

    def __post_init__(self):
        q = np.asarray(self.q_up, dtype=float)
        h = np.asarray(self.h_dn, dtype=float)
        object.__setattr__(self, "q_up", q)
        object.__setattr__(self, "h_dn", h)
        if q.ndim != 1 or q.shape != h.shape:
            raise ForcingError(f"q_up and h_dn must be 1-D of equal length, got {q.shape} and {h.shape}")
        if len(q) < MIN_SERIES_LENGTH:
            raise ForcingError(
                f"series has {len(q)} hours; at least {MIN_SERIES_LENGTH} are needed for one window plus target"
            )
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(h))):
            raise ForcingError("forcings contain NaN or infinite values")
        if np.any(q < 0):
            raise ForcingError("upstream discharge must be non-negative")

    def __len__(self) -> int:
        return len(self.q_up)

    def __eq__(self, other):
        if not isinstance(other, ForcingSeries):
            return NotImplemented
        return (
            self.t0 == other.t0
            and self.dt == other.dt
            and np.array_equal(self.q_up, other.q_up)
            and np.array_equal(self.h_dn, other.h_dn)
        )

    def slice(self, start: int, stop: int) -> "ForcingSeries":
        return ForcingSeries(self.q_up[start:stop], self.h_dn[start:stop], t0=self.t0 + start, dt=self.dt)


# ---------------------------------------------------------------- geometry text

def _floats(tokens, lineno, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise GeometryError(f"expected numbers for {what}, got {' '.join(tokens)!r}", lineno) from None


def parse_geometry(text: str) -> Reach:
    """Parse geometry text into a :class:`Reach` (SI units)."""
    reach_id = None
    scale = 1.0
    sections = []
    block = None

    def close_block(lineno):
        if block["n"] is None:
            raise GeometryError(f"XS {block['chainage']}: missing roughness (N line)", lineno)
        if block["banks"] is None:
            raise GeometryError(f"XS {block['chainage']}: missing BANKS line", lineno)
        try:
            sections.append(
                CrossSection(
                    chainage=block["chainage"] * scale,
                    profile=tuple((s * scale, z * scale) for s, z in block["profile"]),
                    bank_left=block["banks"][0] * scale,
                    bank_right=block["banks"][1] * scale,
                    manning_n=block["n"],
                )
            )
        except GeometryError as exc:
            raise GeometryError(str(exc), lineno) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        upper = line.upper()
        if block is None:
            if upper.startswith("REACH:"):
                reach_id = line.split(":", 1)[1].strip()
            elif upper.startswith("UNITS:"):
                units = line.split(":", 1)[1].strip().upper()
                if units not in ("SI", "US"):
                    raise GeometryError(f"unknown unit system {units!r}", lineno)
                if sections:
                    raise GeometryError("UNITS must precede the first cross-section", lineno)
                scale = FT_TO_M if units == "US" else 1.0
            elif upper.startswith("XS"):
                tokens = line.split()
                if len(tokens) != 2:
                    raise GeometryError("XS line takes exactly one chainage value", lineno)
                block = {"chainage": _floats(tokens[1:], lineno, "chainage")[0],
                         "n": None, "banks": None, "profile": [], "in_profile": False}
            else:
                raise GeometryError(f"unexpected line {line!r}", lineno)
            continue

        tokens = line.split()
        key = tokens[0].upper()
        if key == "END":
            close_block(lineno)
            block = None
        elif block["in_profile"]:
            if len(tokens) != 2:
                raise GeometryError("profile rows are '<station> <elevation>'", lineno)
            block["profile"].append(tuple(_floats(tokens, lineno, "profile point")))
        elif key == "N":
            if len(tokens) != 2:
                raise GeometryError("N line takes one roughness value", lineno)
            block["n"] = _floats(tokens[1:], lineno, "roughness")[0]
        elif key == "BANKS":
            if len(tokens) != 3:
                raise GeometryError("BANKS line takes left and right stations", lineno)
            block["banks"] = tuple(_floats(tokens[1:], lineno, "bank stations"))
        elif key == "PROFILE":
            block["in_profile"] = True
        else:
            raise GeometryError(f"unexpected line {line!r} inside XS block", lineno)

    if block is not None:
        raise GeometryError(f"XS {block['chainage']}: missing END", len(text.splitlines()))
    if reach_id is None:
        raise GeometryError("missing 'REACH:' header")
    return Reach(reach_id, tuple(sections))


def serialize_geometry(reach: Reach, units: str = "SI") -> str:
    """Write ``reach`` in the geometry text format.

    SI output uses ``repr`` floats so that parsing it back is exact.
    """
    units = units.upper()
    if units not in ("SI", "US"):
        raise ValueError(f"unknown unit system {units!r}")
    conv = m_to_ft if units == "US" else (lambda v: v)
    lines = [f"REACH: {reach.id}", f"UNITS: {units}"]
    for xs in reach.cross_sections:
        lines.append(f"XS {float(conv(xs.chainage))!r}")
        lines.append(f"N {xs.manning_n!r}")
        lines.append(f"BANKS {float(conv(xs.bank_left))!r} {float(conv(xs.bank_right))!r}")
        lines.append("PROFILE")
        lines.extend(f"{float(conv(s))!r} {float(conv(z))!r}" for s, z in xs.profile)
        lines.append("END")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- forcings CSV

def parse_forcings(text: str) -> ForcingSeries:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ForcingError("empty forcing file") from None
    if header != ["hour", "q_up", "h_dn"]:
        raise ForcingError(f"expected header 'hour,q_up,h_dn', got {','.join(header)!r}")
    hours, q, h = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ForcingError(f"line {lineno}: expected 3 columns, got {len(row)}")
        try:
            hr, qv, hv = float(row[0]), float(row[1]), float(row[2])
        except ValueError:
            raise ForcingError(f"line {lineno}: non-numeric value in {row!r}") from None
        if math.isnan(qv) or math.isnan(hv) or math.isnan(hr):
            raise ForcingError(f"line {lineno}: NaN value")
        if qv < 0:
            raise ForcingError(f"line {lineno}: negative discharge {qv}")
        hours.append(hr)
        q.append(qv)
        h.append(hv)
    if hours:
        hours_arr = np.array(hours)
        if np.any(np.diff(hours_arr) != 1.0) or hours_arr[0] != round(hours_arr[0]):
            raise ForcingError("hour column must be consecutive integers (uniform 1 h step)")
        t0 = int(hours_arr[0])
    else:
        t0 = 0
    return ForcingSeries(np.array(q), np.array(h), t0=t0)


def serialize_forcings(forcings: ForcingSeries) -> str:
    out = ["hour,q_up,h_dn"]
    for i, (q, h) in enumerate(zip(forcings.q_up, forcings.h_dn)):
        out.append(f"{forcings.t0 + i},{float(q)!r},{float(h)!r}")
    return "\n".join(out) + "\n"


def static_features(reach: Reach) -> np.ndarray:
    """Per cross-section static channels [N, 4] ordered (z_bed, z_bank, n_man, x_coord)."""
    return np.column_stack([reach.z_bed, reach.z_bank, reach.manning_n, reach.x_coord])
