"""Feature binning for histogram-based tree growth.

Each feature is discretized into at most ``max_bins`` value bins; code 255
is reserved for missing values (NaN). When a feature has no more distinct
values than bins, every distinct value gets its own bin with boundaries at
midpoints, which makes histogram split search identical to exact greedy
search.
"""

from __future__ import annotations

import numpy as np

#: Reserved bin code for NaN feature values.
MISSING_BIN = 255

#: Histogram width: 255 value bins + the missing bin.
N_HIST_BINS = 256


def fit_bin_edges(X: np.ndarray, max_bins: int) -> list[np.ndarray]:
    """Per-feature ascending upper bin boundaries.

    Bin j holds values v with edges[j-1] < v <= edges[j]; the last bin is
    unbounded above. Features with fewer distinct values than bins get
    midpoint edges; otherwise edges come from (deduplicated) quantiles.
    """
    X = np.asarray(X, dtype=np.float64)
    edges: list[np.ndarray] = []
    for f in range(X.shape[1]):
        col = X[:, f]
        finite = col[~np.isnan(col)]
        uniq = np.unique(finite)
        if uniq.size <= 1:
            edges.append(np.empty(0, dtype=np.float64))
        elif uniq.size <= max_bins:
            edges.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            cuts = np.linspace(0.0, 100.0, max_bins + 1)[1:-1]
            edges.append(np.unique(np.percentile(finite, cuts, method="linear")))
    return edges


def n_value_bins(edges: list[np.ndarray]) -> np.ndarray:
    return np.array([e.size + 1 for e in edges], dtype=np.int64)


def bin_values(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    """Map raw values onto uint8 bin codes (NaN -> MISSING_BIN)."""
    X = np.asarray(X, dtype=np.float64)
    codes = np.empty(X.shape, dtype=np.uint8)
    for f, e in enumerate(edges):
        col = X[:, f]
        c = np.searchsorted(e, col, side="left")
        c[np.isnan(col)] = MISSING_BIN
        codes[:, f] = c.astype(np.uint8)
    return codes
