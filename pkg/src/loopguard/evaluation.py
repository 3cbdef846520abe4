"""Evaluation machinery: thresholds, labels, 2-D projection, histograms, box stats.

All operations here are pure functions over immutable inputs. Percentile
computation uses the linear-interpolation convention throughout (sort
ascending, position p = q*(n-1), interpolate between neighbors), which
is recorded in exported metadata as "linear".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PERCENTILE_CONVENTION = "linear"


@dataclass
class ThresholdReport:
    q: float
    threshold: float
    train_flagged_fraction: float
    val_flagged_fraction: float


@dataclass
class Projection2D:
    coords: np.ndarray  # (n, 2)
    evr: tuple[float, float]


@dataclass
class HistogramExport:
    bin_edges: np.ndarray
    train_counts: np.ndarray
    val_counts: np.ndarray | None = None
    log_y_hint: bool = True


@dataclass
class LatentReport:
    per_dimension_histograms: list
    heatmap: np.ndarray


@dataclass
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "outliers": list(self.outliers),
        }


def _interp_quantile(sorted_vals: np.ndarray, q: float) -> float:
    n = sorted_vals.shape[0]
    p = q * (n - 1)
    lo = int(np.floor(p))
    frac = p - lo
    if lo + 1 >= n:
        return float(sorted_vals[-1])
    return float(sorted_vals[lo] + frac * (sorted_vals[lo + 1] - sorted_vals[lo]))


def percentile_threshold(train_scores, q: float = 0.95) -> float:
    """Linear-interpolation percentile of the training scores."""
    scores = np.asarray(train_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("cannot take a percentile of empty scores")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return _interp_quantile(np.sort(scores), q)


def classify(scores, threshold: float) -> np.ndarray:
    """Boolean anomaly flags: strictly above the threshold. The threshold sample itself is normal."""
    if not np.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    return np.asarray(scores, dtype=np.float64) > threshold


def threshold_report(train_scores, val_scores, q: float = 0.95) -> ThresholdReport:
    thr = percentile_threshold(train_scores, q)
    train = np.asarray(train_scores, dtype=np.float64)
    val = np.asarray(val_scores, dtype=np.float64)
    return ThresholdReport(
        q=float(q),
        threshold=thr,
        train_flagged_fraction=float(np.mean(classify(train, thr))),
        val_flagged_fraction=float(np.mean(classify(val, thr))) if val.size else 0.0,
    )


def project_2d(vectors) -> Projection2D:
    """Top-2 principal components of the centered data plus their EVR."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ValueError(f"need at least 3 rows and 2 columns, got shape {X.shape}")
    Xc = X - X.mean(axis=0)
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    total = float(np.sum(svals**2))
    if total <= 0.0:
        raise ValueError("data has zero total variance; nothing to project")
    coords = Xc @ vt[:2].T
    evr = (float(svals[0] ** 2 / total), float(svals[1] ** 2 / total) if svals.size > 1 else 0.0)
    return Projection2D(coords=coords, evr=evr)


def _bin_edges(lo: float, hi: float, n_bins: int) -> np.ndarray:
    if hi <= lo:
        # degenerate range: widen symmetrically at machine-epsilon scale
        pad = max(abs(lo), 1.0) * 1e-12
        lo, hi = lo - pad, hi + pad
    return np.linspace(lo, hi, n_bins + 1)


def score_histogram(train_scores, val_scores, n_bins: int = 100) -> HistogramExport:
    """Shared equal-width bins over the union's range; rightmost bin closed."""
    train = np.asarray(train_scores, dtype=np.float64).ravel()
    val = np.asarray(val_scores, dtype=np.float64).ravel()
    union = np.concatenate([train, val])
    if union.size == 0:
        raise ValueError("histogram needs at least one score")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    edges = _bin_edges(float(union.min()), float(union.max()), n_bins)
    train_counts, _ = np.histogram(train, bins=edges)
    val_counts, _ = np.histogram(val, bins=edges)
    return HistogramExport(bin_edges=edges, train_counts=train_counts, val_counts=val_counts)


def latent_report(latents, n_bins: int = 100) -> LatentReport:
    """One histogram per latent dimension plus the raw activation heatmap."""
    L = np.asarray(latents, dtype=np.float64)
    if L.ndim != 2:
        raise ValueError(f"latents must be 2-D, got shape {L.shape}")
    hists = []
    for j in range(L.shape[1]):
        col = L[:, j]
        edges = _bin_edges(float(col.min()), float(col.max()), n_bins)
        counts, _ = np.histogram(col, bins=edges)
        hists.append(HistogramExport(bin_edges=edges, train_counts=counts, val_counts=None))
    return LatentReport(per_dimension_histograms=hists, heatmap=L.copy())


def histogram_density(hist: HistogramExport) -> np.ndarray:
    """count / (n * bin_width) for the train counts."""
    widths = np.diff(hist.bin_edges)
    total = hist.train_counts.sum()
    if total == 0:
        return np.zeros_like(widths)
    return hist.train_counts / (total * widths)


def box_stats(scores) -> BoxStats:
    """Quartiles by linear interpolation; whiskers at the most extreme points within 1.5*IQR."""
    vals = np.asarray(scores, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("box statistics need at least one score")
    s = np.sort(vals)
    q1 = _interp_quantile(s, 0.25)
    med = _interp_quantile(s, 0.50)
    q3 = _interp_quantile(s, 0.75)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = s[(s >= lo_fence) & (s <= hi_fence)]
    whisker_low = float(inside[0]) if inside.size else q1
    whisker_high = float(inside[-1]) if inside.size else q3
    outliers = s[(s < whisker_low) | (s > whisker_high)]
    return BoxStats(
        median=med,
        q1=q1,
        q3=q3,
        whisker_low=whisker_low,
        whisker_high=whisker_high,
        outliers=[float(v) for v in outliers],
    )
