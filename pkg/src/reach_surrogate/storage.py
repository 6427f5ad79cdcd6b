"""Self-describing binary containers for checkpoints and datasets.

Layout of every file::

    magic (8 bytes) | header length (uint32 LE) | JSON header (utf-8)
    | float64 LE blob | sha256 of all preceding bytes (32 bytes)

The header lists each array as ``{"name", "shape", "offset"}`` (offset in
values, not bytes) next to free-form metadata. Writes go to a temporary file
in the target directory which is renamed into place only once complete.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import CHANNELS, NormStats
from .hydro import StateField
from .ingest import ForcingSeries

__all__ = [
    "FORMAT_VERSION",
    "StorageError",
    "ChecksumError",
    "VersionError",
    "atomic_write",
    "write_container",
    "read_container",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_from_estimator",
    "estimator_from_checkpoint",
    "save_dataset",
    "load_dataset",
]

MAGIC = b"RSURR\x00\x0d\x0a"
FORMAT_VERSION = 1
_DIGEST = 32


class StorageError(ValueError):
    pass


class ChecksumError(StorageError):
    pass


class VersionError(StorageError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _encode(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if not np.issubdtype(a.dtype, np.floating) and not np.issubdtype(a.dtype, np.integer):
            raise StorageError(f"array {name!r} has unsupported dtype {a.dtype}")
        flat = np.ascontiguousarray(a, dtype="<f8").ravel()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(flat.tobytes())
        offset += flat.size
    header = {"version": FORMAT_VERSION, "kind": kind, "meta": meta, "arrays": entries, "total": offset}
    hbytes = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def _decode(data: bytes, kind: str | None = None):
    if len(data) < len(MAGIC) + 4 + _DIGEST or not data.startswith(MAGIC):
        raise StorageError("not a reach-surrogate container (bad magic or too short)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch: file is corrupt or truncated")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(body[start : start + hlen].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {header.get('version')} (expected {FORMAT_VERSION})")
    if kind is not None and header.get("kind") != kind:
        raise StorageError(f"expected a {kind} file, found {header.get('kind')!r}")
    blob = np.frombuffer(body, dtype="<f8", offset=start + hlen)
    if blob.size != header["total"]:
        raise StorageError("payload size does not match header")
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = blob[e["offset"] : e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header["kind"], header["meta"], arrays


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    atomic_write(path, _encode(kind, meta, arrays))


def read_container(path, kind: str | None = None):
    """Return ``(kind, meta, arrays)``; nothing is returned unless the checksum holds."""
    return _decode(Path(path).read_bytes(), kind)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    channels: tuple[str, ...]
    norm_stats: NormStats
    params: dict[str, np.ndarray]
    x_coord: np.ndarray
    reach_id: str = ""
    dtype: str = "float64"
    best_epoch: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def dropped_channels(self) -> tuple[str, ...]:
        return tuple(c for c in CHANNELS if c not in self.channels)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.model_config == other.model_config
            and self.train_config == other.train_config
            and tuple(self.channels) == tuple(other.channels)
            and self.norm_stats == other.norm_stats
            and self.params.keys() == other.params.keys()
            and all(
                self.params[k].dtype == other.params[k].dtype and np.array_equal(self.params[k], other.params[k])
                for k in self.params
            )
            and np.array_equal(self.x_coord, other.x_coord)
            and self.reach_id == other.reach_id
            and self.dtype == other.dtype
            and self.best_epoch == other.best_epoch
            and self.extra == other.extra
        )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "channels": list(ckpt.channels),
        "dropped_channels": list(ckpt.dropped_channels),
        "norm_channels": list(ckpt.norm_stats.channels),
        "params": list(ckpt.params),
        "reach_id": ckpt.reach_id,
        "dtype": ckpt.dtype,
        "best_epoch": ckpt.best_epoch,
        "extra": ckpt.extra,
    }
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    arrays["norm/mean"] = ckpt.norm_stats.mean
    arrays["norm/std"] = ckpt.norm_stats.std
    arrays["x_coord"] = ckpt.x_coord
    write_container(path, "checkpoint", meta, arrays)


def load_checkpoint(path, expected_mask=None) -> Checkpoint:
    """Load a checkpoint; with ``expected_mask`` also verify its dropped channels."""
    _, meta, arrays = read_container(path, "checkpoint")
    dtype = meta["dtype"]
    # float32 models are stored widened to float64; narrowing back is exact
    params = {k: arrays[f"param/{k}"].astype(dtype) for k in meta["params"]}
    ckpt = Checkpoint(
        model_config=meta["model_config"],
        train_config=meta["train_config"],
        channels=tuple(meta["channels"]),
        norm_stats=NormStats(arrays["norm/mean"], arrays["norm/std"], tuple(meta["norm_channels"])),
        params=params,
        x_coord=arrays["x_coord"],
        reach_id=meta["reach_id"],
        dtype=dtype,
        best_epoch=meta["best_epoch"],
        extra=meta.get("extra", {}),
    )
    if expected_mask is not None and set(expected_mask) != set(ckpt.dropped_channels):
        raise StorageError(
            f"channel mask mismatch: checkpoint drops {list(ckpt.dropped_channels)}, "
            f"the run expects {sorted(expected_mask)}"
        )
    return ckpt


def checkpoint_from_estimator(est, reach_id: str = "") -> Checkpoint:
    return Checkpoint(
        model_config=est.model_config.to_dict(),
        train_config=est.train_config.to_dict(),
        channels=tuple(est.channels_),
        norm_stats=est.norm_stats_,
        params={k: v.copy() for k, v in est.params_.items()},
        x_coord=np.asarray(est.x_coord_, dtype=np.float64),
        reach_id=reach_id,
        dtype=est.dtype,
        best_epoch=int(est.best_epoch_),
    )


def estimator_from_checkpoint(ckpt: Checkpoint):
    """Rebuild a fitted regressor from a checkpoint."""
    from .estimator import GRUGeoFNORegressor
    from .features import mode_count

    mc, tc = ckpt.model_config, ckpt.train_config
    est = GRUGeoFNORegressor(
        hidden=mc["hidden"],
        max_modes=mc["max_modes"],
        seq_len=mc["seq_len"],
        n_blocks=mc["n_blocks"],
        residual=mc["residual"],
        epochs=tc["epochs"],
        lr=tc["lr"],
        batch_size=tc["batch_size"],
        weight_decay=tc["weight_decay"],
        smoothness_weight=tc["smoothness_weight"],
        val_fraction=tc["val_fraction"],
        drop_channels=ckpt.dropped_channels,
        dtype=ckpt.dtype,
        random_state=tc["seed"],
    )
    n_xs = len(ckpt.x_coord)
    est.channels_ = tuple(ckpt.channels)
    est.n_features_in_ = len(CHANNELS)
    est.n_xs_ = n_xs
    est.k_max_ = mode_count(n_xs, mc["max_modes"])
    est.x_coord_ = ckpt.x_coord
    est.norm_stats_ = ckpt.norm_stats
    est.params_ = {k: v.copy() for k, v in ckpt.params.items()}
    est.best_epoch_ = ckpt.best_epoch
    return est


# ---------------------------------------------------------------- datasets

def save_dataset(path, reach_id: str, segments) -> None:
    """Store ``(StateField, ForcingSeries)`` segments of one reach."""
    arrays = {}
    meta_segments = []
    for k, (state, forcings) in enumerate(segments):
        arrays[f"{k}/h"] = state.h
        arrays[f"{k}/q"] = state.q
        arrays[f"{k}/q_up"] = forcings.q_up
        arrays[f"{k}/h_dn"] = forcings.h_dn
        meta_segments.append({"t0": state.t0, "dt": state.dt, "forcing_t0": forcings.t0, "forcing_dt": forcings.dt})
    write_container(path, "dataset", {"reach_id": reach_id, "segments": meta_segments}, arrays)


def load_dataset(path):
    """Return ``(reach_id, [(StateField, ForcingSeries), ...])``."""
    _, meta, arrays = read_container(path, "dataset")
    segments = []
    for k, m in enumerate(meta["segments"]):
        state = StateField(arrays[f"{k}/h"], arrays[f"{k}/q"], reach_id=meta["reach_id"], dt=m["dt"], t0=m["t0"])
        forcings = ForcingSeries(arrays[f"{k}/q_up"], arrays[f"{k}/h_dn"], t0=m["forcing_t0"], dt=m["forcing_dt"])
        segments.append((state, forcings))
    return meta["reach_id"], segments
