"""Hidden-space instability scores, anomaly masks and B-scan decisions.

A block ``v`` is encoded to ``h``, decoded, and the reconstruction encoded
again to ``h2``; its score is ``||h - h2||`` over the flattened hidden
tensor. Scores are spread over the block footprint by overlap-and-average
and each B-scan is flagged when its mask maximum exceeds ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._parallel import map_ordered, single_blas
from .autoencoder import AutoencoderModel, _to_internal
from .blocking import BlockGeometry, aggregate_mask, gather_blocks, plan_blocks
from .nn import ShapeError, stack_forward
from .volume import Polarization, Volume, save_scores, save_volume


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    gamma: float = 0.0
    geometry: BlockGeometry = field(default_factory=BlockGeometry)
    model: AutoencoderModel | None = None

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class AnomalyMask:
    """Mask field ``M[t, x, y]`` with per-B-scan maxima.

    ``template`` carries the sampling metadata of the scored volume.
    """

    field: np.ndarray
    uncovered: np.ndarray
    block_scores: np.ndarray
    template: Volume | None = None

    @property
    def per_bscan_max(self) -> np.ndarray:
        return self.field.max(axis=(0, 1))

    def predict(self, gamma: float) -> np.ndarray:
        return classify(self, gamma)


def _instability(model, x):
    """Scores for an internal-layout batch ``(C, B, H, W)``."""
    h = stack_forward(model.encoder_layers, x)
    h2 = stack_forward(model.encoder_layers, stack_forward(model.decoder_layers, h))
    diff = (h - h2).astype(np.float64)
    return np.sqrt(np.einsum("cbhw,cbhw->b", diff, diff))


def anomaly_score(model: AutoencoderModel, block) -> float:
    x, single = _to_internal(block, model.spec.input_shape, "block")
    if not single:
        raise ShapeError("anomaly_score takes a single (C, H, W) block")
    return float(_instability(model, x)[0])


def score_blocks(model: AutoencoderModel, blocks, chunk: int = 64, threads: int = 1,
                 dtype="float32") -> np.ndarray:
    """Scores for an ``(N, C, H, W)`` block array."""
    blocks = np.asarray(blocks)
    if blocks.ndim != 4 or blocks.shape[1:] != model.spec.input_shape:
        raise ShapeError(f"blocks shape {blocks.shape} does not match model input")

    def run(i):
        x = np.ascontiguousarray(blocks[i:i + chunk].transpose(1, 0, 2, 3), dtype=dtype)
        return _instability(model, x)

    with single_blas():
        parts = map_ordered(run, range(0, len(blocks), chunk), threads)
    return np.concatenate(parts) if parts else np.zeros(0)


def score_volume(model: AutoencoderModel, v, geom: BlockGeometry | None = None,
                 chunk: int = 64, threads: int = 1, dtype="float32") -> AnomalyMask:
    """Score every block of the lattice and assemble the anomaly mask.

    Blocks are processed in fixed chunks whose boundaries do not depend on
    ``threads``, so the result is the same for any thread count.
    """
    template = v if isinstance(v, Volume) else None
    data = v.data if isinstance(v, Volume) else np.asarray(v, dtype=np.float64)
    geom = geom or BlockGeometry.square(model.spec.input_size[0], 4, model.spec.dims.value)
    if (geom.size_y, geom.size_t, geom.size_x) != model.spec.input_shape:
        raise ShapeError(
            f"block geometry {geom.sizes} does not fit model input {model.spec.input_shape}"
        )
    grid = plan_blocks(data.shape, geom)
    n = len(grid)

    def run(start):
        x = gather_blocks(data, grid, np.arange(start, min(start + chunk, n)), dtype=dtype)
        return _instability(model, x)

    with single_blas():
        parts = map_ordered(run, range(0, n, chunk), threads)
    scores = np.concatenate(parts)
    agg = aggregate_mask(data.shape, grid, scores)
    return AnomalyMask(agg.values, agg.uncovered, scores, template)


def _maxima(mask_or_scores) -> np.ndarray:
    if isinstance(mask_or_scores, AnomalyMask):
        return mask_or_scores.per_bscan_max
    return np.asarray(mask_or_scores, dtype=np.float64)


def classify(mask_or_scores, gamma: float) -> np.ndarray:
    """``1`` where the B-scan maximum is strictly above ``gamma``."""
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    return (_maxima(mask_or_scores) > gamma).astype(np.int8)


def select_threshold(masks, truth, target_fpr: float = 0.0) -> float:
    """Smallest gamma whose calibration false-positive rate is <= ``target_fpr``.

    ``masks`` is one mask, a list of masks, or an array of per-B-scan maxima;
    ``truth`` holds the matching labels, concatenated for a list.
    """
    if isinstance(masks, (list, tuple)):
        scores = np.concatenate([_maxima(m) for m in masks])
    else:
        scores = _maxima(masks)
    truth = np.asarray(truth)
    if truth.shape != scores.shape:
        raise ShapeError(f"{len(truth)} labels for {len(scores)} scores")
    if not 0 <= target_fpr <= 1:
        raise ValueError("target_fpr must lie in [0, 1]")
    neg = np.sort(scores[truth == 0])[::-1]
    if len(neg) == 0:
        raise CalibrationError("calibration set has no negative B-scans")
    allowed = int(np.floor(target_fpr * len(neg) + 1e-12))
    if allowed >= len(neg):
        return 0.0
    return max(float(neg[allowed]), 0.0)


def export_mask(mask: AnomalyMask, gprv=None, csv=None, pgm_dir=None) -> list[Path]:
    """Write the mask as GPRV (tag A), per-B-scan maxima CSV and/or PGM slices."""
    written = []
    if gprv is not None:
        tmpl = mask.template or Volume(np.zeros((1, 1, 1)))
        vol = Volume(mask.field, tmpl.dt, tmpl.dx, tmpl.dy, tmpl.velocity, Polarization.A)
        save_volume(vol, gprv)
        written.append(Path(gprv))
    if csv is not None:
        save_scores(mask.per_bscan_max, csv)
        written.append(Path(csv))
    if pgm_dir is not None:
        from PIL import Image

        out = Path(pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        peak = mask.field.max()
        scaled = np.zeros(mask.field.shape, np.uint8) if peak <= 0 else np.round(
            255 * mask.field / peak).astype(np.uint8)
        for y in range(scaled.shape[2]):
            path = out / f"bscan_{y + 1:04d}.pgm"
            Image.fromarray(np.ascontiguousarray(scaled[:, :, y])).save(path)
            written.append(path)
    return written
