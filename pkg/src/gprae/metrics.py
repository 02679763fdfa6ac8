"""ROC curves, AUC and confusion counts over per-B-scan scores.

The curve sweeps every distinct score as a threshold with the strict ``>``
rule used by the detector, so tied scores move FPR and TPR together and the
trapezoid over that diagonal step gives tied pairs half credit. The area
therefore equals the pairwise statistic computed by ``auc_oracle``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ShapeError


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _prepare(scores, truth):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise ShapeError(f"{len(scores)} scores for {len(truth)} labels")
    if not np.all(np.isin(truth, (0, 1))):
        raise EvaluationError("labels must be 0 or 1")
    truth = truth.astype(bool)
    if truth.all() or not truth.any():
        raise EvaluationError("ROC needs at least one positive and one negative B-scan")
    return scores, truth


def roc(scores, truth) -> RocCurve:
    """Threshold sweep from ``+inf`` (nothing flagged) down to ``-inf``.

    ``thresholds[k]`` is the gamma producing point ``k``; the first point is
    (0, 0) and the last (1, 1).
    """
    scores, truth = _prepare(scores, truth)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], truth[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(t)[ends]
    fp = np.cumsum(~t)[ends]
    tpr = np.r_[0.0, tp / t.sum()]
    fpr = np.r_[0.0, fp / (~t).sum()]
    # gamma just below each distinct score flags it and everything above
    thresholds = np.r_[np.inf, np.r_[s[ends][1:], -np.inf]]
    auc = float(np.trapezoid(tpr, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(tpr, fpr))
    return RocCurve(thresholds, fpr, tpr, auc)


def auc_oracle(scores, truth) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties count 1/2."""
    scores, truth = _prepare(scores, truth)
    pos, neg = scores[truth], scores[~truth]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float
    fpr: float
    tpr_defined: bool = True
    fpr_defined: bool = True


def confusion(predicted, truth) -> Confusion:
    """Counts and rates; a rate with an empty denominator is 0 and flagged."""
    p = np.asarray(predicted).astype(bool)
    t = np.asarray(truth).astype(bool)
    if p.shape != t.shape:
        raise ShapeError(f"{p.size} predictions for {t.size} labels")
    tp, fp = int(np.sum(p & t)), int(np.sum(p & ~t))
    tn, fn = int(np.sum(~p & ~t)), int(np.sum(~p & t))
    n_pos, n_neg = tp + fn, fp + tn
    return Confusion(
        tp, fp, tn, fn,
        tp / n_pos if n_pos else 0.0,
        fp / n_neg if n_neg else 0.0,
        n_pos > 0, n_neg > 0,
    )


def save_roc(curve: RocCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fpr,tpr\n")
        for g, f, t in zip(curve.thresholds, curve.fpr, curve.tpr):
            fh.write(f"{float(g)!r},{float(f)!r},{float(t)!r}\n")
        fh.write(f"auc,{curve.auc!r}\n")
