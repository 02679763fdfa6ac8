"""Regular block lattice over a volume and overlap-and-average aggregation.

Blocks have sizes ``(dt, dx, dy)`` and strides ``(st, sx, sy)`` in samples.
Origins form the full lattice ``{0, s, 2s, ...}`` per axis with the block
inside the volume; no edge-snapped extra block is added, so a remainder
``(dim - size) % stride`` leaves uncovered tail samples. Blocks are numbered
1..I with ``y`` slowest and ``t`` fastest. A block is returned as an array
``(dy, dt, dx)``: crossline slices become channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ShapeError
from .volume import Volume


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BlockGeometry:
    size_t: int = 64
    size_x: int = 64
    size_y: int = 3
    stride_t: int = 4
    stride_x: int = 4
    stride_y: int = 1

    def __post_init__(self):
        for size, stride, axis in zip(self.sizes, self.strides, "txy"):
            if size < 1 or not 1 <= stride <= size:
                raise GeometryError(f"axis {axis}: need 1 <= stride <= size, got {stride}, {size}")
        if self.size_y not in (1, 3):
            raise GeometryError(f"crossline block size must be 1 or 3, got {self.size_y}")

    @classmethod
    def square(cls, size: int = 64, stride: int = 4, dims: str = "3d") -> "BlockGeometry":
        return cls(size, size, 3 if str(dims).lower() == "3d" else 1, stride, stride, 1)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.size_t, self.size_x, self.size_y)

    @property
    def strides(self) -> tuple[int, int, int]:
        return (self.stride_t, self.stride_x, self.stride_y)


@dataclass(frozen=True)
class BlockGrid:
    dims: tuple[int, int, int]
    geometry: BlockGeometry
    counts: tuple[int, int, int]

    def __len__(self) -> int:
        return int(np.prod(self.counts))

    @property
    def n_blocks(self) -> int:
        return len(self)

    def axis_origins(self, axis: int) -> np.ndarray:
        return np.arange(self.counts[axis]) * self.geometry.strides[axis]

    def origin(self, i: int) -> tuple[int, int, int]:
        """Origin ``(t, x, y)`` of block ``i`` (1-based)."""
        if not 1 <= i <= len(self):
            raise IndexError(f"block index {i} outside [1, {len(self)}]")
        nt, nx, _ = self.counts
        k = i - 1
        it, k = k % nt, k // nt
        ix, iy = k % nx, k // nx
        st, sx, sy = self.geometry.strides
        return (it * st, ix * sx, iy * sy)

    def origins(self) -> np.ndarray:
        """All origins as an ``(I, 3)`` array in block order."""
        t, x, y = (self.axis_origins(a) for a in range(3))
        yy, xx, tt = np.meshgrid(y, x, t, indexing="ij")
        return np.stack([tt.ravel(), xx.ravel(), yy.ravel()], axis=1)


def plan_blocks(dims, geom: BlockGeometry) -> BlockGrid:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise GeometryError(f"dims must be (T, X, Y), got {dims}")
    counts = []
    for dim, size, stride, axis in zip(dims, geom.sizes, geom.strides, "txy"):
        if size > dim:
            raise GeometryError(f"block size {size} exceeds volume size {dim} along {axis}")
        counts.append((dim - size) // stride + 1)
    return BlockGrid(dims, geom, tuple(counts))


def _data(v):
    return v.data if isinstance(v, Volume) else np.asarray(v)


def extract_block(v, grid: BlockGrid, i: int) -> np.ndarray:
    data = _data(v)
    if data.shape != grid.dims:
        raise ShapeError(f"volume shape {data.shape} does not match grid {grid.dims}")
    t, x, y = grid.origin(i)
    gt, gx, gy = grid.geometry.sizes
    return np.ascontiguousarray(data[t:t + gt, x:x + gx, y:y + gy].transpose(2, 0, 1))


def gather_blocks(data, grid: BlockGrid, indices, dtype=np.float64) -> np.ndarray:
    """Blocks for 0-based ``indices`` as ``(C, B, dt, dx)``, channel-major."""
    gt, gx, gy = grid.geometry.sizes
    origins = grid.origins()[np.asarray(indices)]
    out = np.empty((gy, len(origins), gt, gx), dtype=dtype)
    for b, (t, x, y) in enumerate(origins):
        out[:, b] = data[t:t + gt, x:x + gx, y:y + gy].transpose(2, 0, 1)
    return out


@dataclass(frozen=True)
class MaskField:
    """Overlap-averaged field plus the samples no block covered."""

    values: np.ndarray
    uncovered: np.ndarray

    @property
    def n_uncovered(self) -> int:
        return int(self.uncovered.sum())


def aggregate_mask(dims, grid: BlockGrid, scores) -> MaskField:
    """Mean of the block scores over every block containing each sample."""
    scores = np.asarray(scores, dtype=np.float64)
    if tuple(dims) != grid.dims:
        raise ShapeError(f"dims {tuple(dims)} do not match grid {grid.dims}")
    if scores.shape != (len(grid),):
        raise ShapeError(f"expected {len(grid)} scores, got shape {scores.shape}")
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise ValueError("block scores must be finite and non-negative")
    total = np.zeros(grid.dims)
    count = np.zeros(grid.dims, dtype=np.int64)
    gt, gx, gy = grid.geometry.sizes
    for (t, x, y), e in zip(grid.origins(), scores):
        total[t:t + gt, x:x + gx, y:y + gy] += e
        count[t:t + gt, x:x + gx, y:y + gy] += 1
    uncovered = count == 0
    values = np.divide(total, count, out=np.zeros_like(total), where=~uncovered)
    return MaskField(values, uncovered)


def background_blocks(data, geom: BlockGeometry, scans, max_blocks: int | None = None,
                      seed: int = 0) -> np.ndarray:
    """Training blocks ``(N, C, dt, dx)`` lying wholly inside ``scans``.

    ``scans`` are 0-based crossline indices forming a contiguous run. With
    ``max_blocks`` set, a seeded subset of that many blocks is drawn.
    """
    data = _data(data)
    scans = np.asarray(sorted(scans))
    if len(scans) == 0 or np.any(np.diff(scans) != 1):
        raise ValueError("training scans must be a non-empty contiguous run")
    sub = data[:, :, scans[0]:scans[-1] + 1]
    grid = plan_blocks(sub.shape, geom)
    idx = np.arange(len(grid))
    if max_blocks is not None and max_blocks < len(idx):
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(idx), size=max_blocks, replace=False))
    return np.ascontiguousarray(gather_blocks(sub, grid, idx).transpose(1, 0, 2, 3))
