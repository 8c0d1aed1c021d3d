"""Evaluation metrics over per-residue scores.

All ranking metrics reduce to exact integer confusion/pair counts before a
single final float division, so they agree bit-for-bit with brute-force
oracles. F_max pools confusion counts across proteins (micro) by default;
Hits@k defaults to any-hit per protein. Ties: thresholding uses score >=
threshold, ranking breaks score ties by ascending residue index, AUPRC
groups tied scores pessimistically, AUROC counts ties as half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, UndefinedMetricError

__all__ = [
    "EvalRecord",
    "MetricReport",
    "fmax",
    "auprc",
    "auroc",
    "mcc",
    "hits_at_k",
    "compute_report",
    "CalibrationSample",
    "CalibrationTable",
    "calibration_report",
    "spearman",
]


@dataclass(frozen=True)
class EvalRecord:
    protein_id: str
    scores: np.ndarray  # floats in (0, 1)
    labels: np.ndarray  # {0, 1}

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels).astype(np.int8).reshape(-1)
        if scores.shape != labels.shape or scores.size == 0:
            raise UndefinedMetricError(
                f"record {self.protein_id!r}: {scores.size} scores vs "
                f"{labels.size} labels (need equal and >= 1)"
            )
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)


def _pooled(records: list[EvalRecord]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.concatenate([r.scores for r in records])
    labels = np.concatenate([r.labels for r in records])
    return scores, labels


def _group_counts(scores: np.ndarray, labels: np.ndarray):
    """Descending distinct scores with per-group positive/total counts."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    values = s[starts]
    pos = np.add.reduceat(y, starts) if s.size else np.array([], dtype=int)
    totals = ends - starts
    return values, pos.astype(int), totals.astype(int)


def fmax(records: list[EvalRecord], mode: str = "micro") -> tuple[float, float]:
    """Maximum F1 over thresholds drawn from the pooled distinct scores.

    Predictions are score >= threshold. Returns (fmax, smallest threshold
    achieving it). Micro mode pools confusion counts over all proteins;
    macro averages per-protein F1 (0/0 counts as 0) at each threshold.
    """
    scores, labels = _pooled(records)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise UndefinedMetricError("fmax undefined: no positive residues")

    if mode == "micro":
        values, pos, totals = _group_counts(scores, labels)
        best_f, best_t = -1.0, math.inf
        tp = 0
        predicted = 0
        for value, p, t in zip(values, pos, totals):
            tp += int(p)
            predicted += int(t)
            denom = predicted + total_pos  # 2TP + FP + FN
            f1 = 2.0 * tp / denom if denom else 0.0
            if f1 > best_f or (f1 == best_f and value < best_t):
                best_f, best_t = f1, float(value)
        return best_f, best_t
    if mode == "macro":
        thresholds = np.unique(scores)[::-1]
        best_f, best_t = -1.0, math.inf
        for value in thresholds:
            total = 0.0
            for rec in records:
                predicted = rec.scores >= value
                tp = int((predicted & (rec.labels == 1)).sum())
                denom = int(predicted.sum()) + int(rec.labels.sum())
                total += 2.0 * tp / denom if denom else 0.0
            f1 = total / len(records)
            if f1 > best_f or (f1 == best_f and value < best_t):
                best_f, best_t = f1, float(value)
        return best_f, best_t
    raise ParameterError(f"unknown fmax mode {mode!r}")


def auprc(records: list[EvalRecord]) -> float:
    """Average precision with pessimistic tie grouping.

    Scores are ranked descending; each positive contributes the precision
    at the end of its tie group; the mean is over all positives.
    """
    scores, labels = _pooled(records)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise UndefinedMetricError("auprc undefined: no positive residues")
    _, pos, totals = _group_counts(scores, labels)
    ap = 0.0
    tp = 0
    seen = 0
    for p, t in zip(pos, totals):
        tp += int(p)
        seen += int(t)
        if p:
            ap += int(p) * (tp / seen)
    return ap / total_pos


def auroc(records: list[EvalRecord]) -> float:
    """Exact Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg)."""
    scores, labels = _pooled(records)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc undefined: needs both classes")
    # Midranks computed per tie group; the positives' rank sum minus
    # P(P+1)/2 equals wins + ties/2 exactly (half-integers are exact).
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    midranks = np.empty(s.size)
    for lo, hi in zip(starts, ends):
        midranks[lo:hi] = (lo + hi + 1) / 2.0  # 1-based midrank
    rank_sum = float(midranks[labels[order] == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / float(n_pos * n_neg)


def confusion(records: list[EvalRecord], threshold: float) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) pooled at score >= threshold."""
    scores, labels = _pooled(records)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int((~predicted & ~actual).sum())
    return tp, fp, fn, tn


def mcc(records: list[EvalRecord], threshold: float) -> float:
    """Matthews correlation at the given threshold; 0 when any denominator
    factor vanishes."""
    tp, fp, fn, tn = confusion(records, threshold)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(float(denom))


def hits_at_k(
    records: list[EvalRecord], k: int, mode: str = "any"
) -> tuple[float, int]:
    """Top-k hit statistic averaged over proteins with >= 1 positive.

    "any" scores 1 when any true site ranks in the protein's k highest
    scores (ties resolved by ascending residue index); "recall" scores the
    fraction of the protein's true sites ranked in the top k. Returns
    (value, number of skipped zero-positive proteins).
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if mode not in ("any", "recall"):
        raise ParameterError(f"unknown hits mode {mode!r}")
    total = 0.0
    counted = 0
    skipped = 0
    for rec in records:
        n_pos = int(rec.labels.sum())
        if n_pos == 0:
            skipped += 1
            continue
        counted += 1
        order = np.lexsort((np.arange(rec.scores.size), -rec.scores))
        top = rec.labels[order[:k]]
        if mode == "any":
            total += 1.0 if top.any() else 0.0
        else:
            total += int(top.sum()) / n_pos
    if counted == 0:
        raise UndefinedMetricError("hits@k undefined: no protein has a positive")
    return total / counted, skipped


@dataclass
class MetricReport:
    fmax: float
    threshold_at_fmax: float
    auprc: float
    auroc: float
    mcc: float
    hits: dict[int, float]
    counts: dict[str, int] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fmax": self.fmax,
            "threshold_at_fmax": self.threshold_at_fmax,
            "auprc": self.auprc,
            "auroc": self.auroc,
            "mcc": self.mcc,
            "hits": {str(k): v for k, v in self.hits.items()},
            "counts": dict(self.counts),
            "flags": dict(self.flags),
        }

    def to_text(self) -> str:
        lines = [
            f"fmax {self.fmax:.6f}",
            f"threshold_at_fmax {self.threshold_at_fmax:.6f}",
            f"auprc {self.auprc:.6f}",
            f"auroc {self.auroc:.6f}",
            f"mcc {self.mcc:.6f}",
        ]
        for k in sorted(self.hits):
            lines.append(f"hits@{k} {self.hits[k]:.6f}")
        for key in sorted(self.counts):
            lines.append(f"count.{key} {self.counts[key]}")
        for key in sorted(self.flags):
            lines.append(f"flag.{key} {self.flags[key]}")
        return "\n".join(lines) + "\n"


def compute_report(
    records: list[EvalRecord],
    ks: tuple[int, ...] = (1, 5, 10),
    hits_mode: str = "any",
    fmax_mode: str = "micro",
) -> MetricReport:
    best_f, threshold = fmax(records, fmax_mode)
    hits = {}
    skipped = 0
    for k in ks:
        hits[k], skipped = hits_at_k(records, k, hits_mode)
    scores, labels = _pooled(records)
    return MetricReport(
        fmax=best_f,
        threshold_at_fmax=threshold,
        auprc=auprc(records),
        auroc=auroc(records),
        mcc=mcc(records, threshold),
        hits=hits,
        counts={
            "proteins": len(records),
            "residues": int(labels.size),
            "positives": int(labels.sum()),
            "proteins_without_positives": skipped,
        },
        flags={"hits_mode": hits_mode, "fmax_mode": fmax_mode},
    )


# ---------------------------------------------------------------------------
# Reliability-error calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationSample:
    y_hat: float
    label: int
    u: dict[str, float]  # per-modality reliability indicator


@dataclass
class CalibrationTable:
    modality: str
    bin_low: list[float]
    bin_high: list[float]
    counts: list[int]
    error_rates: list[float]
    spearman: float
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "modality": self.modality,
            "bins": [
                {"low": lo, "high": hi, "count": c, "error_rate": e}
                for lo, hi, c, e in zip(
                    self.bin_low, self.bin_high, self.counts, self.error_rates
                )
            ],
            "spearman": self.spearman,
            "empty": self.empty,
        }


def spearman(x, y) -> float:
    """Spearman rank correlation with midranks; 0.0 when either side is
    constant (the degenerate all-equal case)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        return 0.0
    rx, ry = _midranks(x), _midranks(y)
    sx, sy = rx.std(), ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0
    return float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    s = values[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    ranks = np.empty(s.size)
    for lo, hi in zip(starts, ends):
        ranks[lo:hi] = (lo + hi + 1) / 2.0
    out = np.empty(s.size)
    out[order] = ranks
    return out


def calibration_report(
    samples: list[CalibrationSample],
    modalities: tuple[str, ...],
    confidence_band: float = 0.8,
    bins: int = 10,
) -> dict[str, CalibrationTable]:
    """Error rate binned by reliability indicator, per modality.

    Restricts to high-confidence residues (y_hat > band or y_hat < 1-band),
    splits them into equal-count bins by the modality's u value (quantile
    edges so bins stay populated), and reports per-bin error rates of the
    0.5-thresholded prediction plus the Spearman statistic between bin
    index and bin error rate. An empty high-confidence set yields a table
    flagged empty rather than an error.
    """
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    y_hat = np.array([s.y_hat for s in samples])
    labels = np.array([s.label for s in samples])
    keep = (y_hat > confidence_band) | (y_hat < 1.0 - confidence_band)
    tables: dict[str, CalibrationTable] = {}
    for modality in modalities:
        if not keep.any():
            tables[modality] = CalibrationTable(
                modality=modality,
                bin_low=[],
                bin_high=[],
                counts=[],
                error_rates=[],
                spearman=0.0,
                empty=True,
            )
            continue
        u = np.array([s.u[modality] for s in samples])[keep]
        errors = ((y_hat[keep] >= 0.5).astype(int) != labels[keep]).astype(float)
        edges = np.quantile(u, np.linspace(0.0, 1.0, bins + 1))
        assign = np.clip(np.searchsorted(edges[1:-1], u, side="right"), 0, bins - 1)
        lows, highs, counts, rates = [], [], [], []
        kept_bins = []
        for b in range(bins):
            mask = assign == b
            count = int(mask.sum())
            if count == 0:
                continue
            kept_bins.append(b)
            lows.append(float(u[mask].min()))
            highs.append(float(u[mask].max()))
            counts.append(count)
            rates.append(float(errors[mask].mean()))
        tables[modality] = CalibrationTable(
            modality=modality,
            bin_low=lows,
            bin_high=highs,
            counts=counts,
            error_rates=rates,
            spearman=spearman(np.array(kept_bins, dtype=float), np.array(rates)),
        )
    return tables
