"""GPR volume data model and the GPRV binary file format.

A volume is a real-valued cube indexed ``(t, x, y)``: two-way travel time,
inline position and crossline position (one B-scan per ``y``). Arrays are
held as numpy ``(T, X, Y)`` arrays in float64.

GPRV layout (little-endian)::

    offset  size  field
    0       4     magic b"GPRV"
    4       2     version (u16) = 1
    6       1     polarization (u8): 0=H, 1=V, 2=A (fused)
    7       1     reserved (u8) = 0
    8       12    T, X, Y (u32 each)
    20      32    dt [ns], dx [cm], dy [cm], velocity [cm/ns] (f64 each)
    52      4*N   samples as f32, t fastest, then x, then y (N = T*X*Y)

Labels files are plain text, one ``y,label`` line per B-scan with 1-based
``y``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

MAGIC = b"GPRV"
VERSION = 1
_HEADER = struct.Struct("<4sHBB3I4d")


class FormatError(ValueError):
    """Raised when a file does not follow the GPRV layout."""


class LengthError(FormatError):
    """Raised when the payload length disagrees with the header."""


class Polarization(enum.IntEnum):
    H = 0
    V = 1
    A = 2

    @classmethod
    def parse(cls, value) -> "Polarization":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))


@dataclass(frozen=True, eq=False)
class Volume:
    """Radar data cube ``data[t, x, y]`` with acquisition metadata.

    ``dt`` is in ns, ``dx``/``dy`` in cm and ``velocity`` in cm/ns.
    """

    data: np.ndarray
    dt: float = 0.0117
    dx: float = 0.4
    dy: float = 0.8
    velocity: float = 14.0
    polarization: Polarization = Polarization.H

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D (T, X, Y), got shape {data.shape}")
        if min(data.shape) < 1:
            raise ValueError(f"volume dims must be >= 1, got {data.shape}")
        for name in ("dt", "dx", "dy", "velocity"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {value}")
            object.__setattr__(self, name, value)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "polarization", Polarization.parse(self.polarization))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data, **changes) -> "Volume":
        """Copy of this volume with new samples (and optionally metadata)."""
        return replace(self, data=data, **changes)

    def same_geometry(self, other: "Volume") -> bool:
        return (
            self.shape == other.shape
            and self.dt == other.dt
            and self.dx == other.dx
            and self.dy == other.dy
            and self.velocity == other.velocity
        )


@dataclass(frozen=True, eq=False)
class ScanLabels:
    """Per-B-scan ground truth ``truth`` and optional estimate ``predicted``."""

    truth: np.ndarray
    predicted: np.ndarray | None = field(default=None)

    def __post_init__(self):
        truth = _as_binary(self.truth, "truth")
        object.__setattr__(self, "truth", truth)
        if self.predicted is not None:
            pred = _as_binary(self.predicted, "predicted")
            if pred.shape != truth.shape:
                raise ValueError("predicted and truth labels differ in length")
            object.__setattr__(self, "predicted", pred)

    def __len__(self):
        return len(self.truth)


def _as_binary(values, name) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} labels must be 1D")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} labels must be 0 or 1")
    arr = arr.astype(np.int8)
    arr.setflags(write=False)
    return arr


def save_volume(v: Volume, path) -> None:
    T, X, Y = v.shape
    header = _HEADER.pack(
        MAGIC, VERSION, int(v.polarization), 0, T, X, Y, v.dt, v.dx, v.dy, v.velocity
    )
    # t fastest: Fortran order over (t, x, y)
    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write volume to {path}: {exc}") from exc


def load_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the GPRV header")
    magic, version, pol, _, T, X, Y, dt, dx, dy, vel = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported GPRV version {version}")
    if pol not in (0, 1, 2):
        raise FormatError(f"{path}: unknown polarization code {pol}")
    n = T * X * Y
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n:
        raise LengthError(
            f"{path}: header declares {n} samples, payload holds {len(payload) / 4:g}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape((T, X, Y), order="F")
    return Volume(data, dt=dt, dx=dx, dy=dy, velocity=vel, polarization=Polarization(pol))


def normalize(v: Volume) -> Volume:
    """Scale by the global max-abs so samples lie in [-1, 1]."""
    peak = np.max(np.abs(v.data))
    if peak == 0:
        return v.with_data(v.data)
    return v.with_data(v.data / peak)


def slice_bscan(v: Volume, y: int) -> np.ndarray:
    """Copy of the ``y``-th B-scan (1-based), shape ``(T, X)``."""
    Y = v.shape[2]
    if not 1 <= y <= Y:
        raise IndexError(f"B-scan index {y} outside [1, {Y}]")
    return v.data[:, :, y - 1].copy()


def save_labels(labels, path) -> None:
    labels = _as_binary(labels, "truth")
    with open(path, "w") as fh:
        for y, lab in enumerate(labels, start=1):
            fh.write(f"{y},{int(lab)}\n")


def load_labels(path) -> np.ndarray:
    """Read a ``y,label`` file into a 0/1 array ordered by ``y``."""
    pairs = _read_pairs(path)
    ys = [int(y) for y, _ in pairs]
    if sorted(ys) != list(range(1, len(ys) + 1)):
        raise FormatError(f"{path}: B-scan indices must cover 1..{len(ys)} exactly once")
    out = np.zeros(len(ys), dtype=np.int8)
    for y, lab in pairs:
        out[int(y) - 1] = int(float(lab))
    return _as_binary(out, "truth")


def _read_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'y,value', got {line!r}")
            if lineno == 1 and not parts[0].lstrip("-").isdigit():
                continue  # header row
            pairs.append((parts[0], parts[1]))
    return pairs


def save_scores(scores, path, header: str = "y,max_score") -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for y, s in enumerate(np.asarray(scores, dtype=np.float64), start=1):
            fh.write(f"{y},{float(s)!r}\n")


def load_scores(path) -> np.ndarray:
    pairs = _read_pairs(path)
    ys = [int(y) for y, _ in pairs]
    if sorted(ys) != list(range(1, len(ys) + 1)):
        raise FormatError(f"{path}: B-scan indices must cover 1..{len(ys)} exactly once")
    out = np.empty(len(ys))
    for y, s in pairs:
        out[int(y) - 1] = float(s)
    return out
