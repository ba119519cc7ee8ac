"""Pure-numpy histogram kernels.

Reference implementation of the two hot training kernels. The compiled
backend in ``_hist_cy`` must produce bit-identical outputs: accumulations
run in the same sample/bin order and gain expressions are written with the
same operation order, so both backends are interchangeable mid-pipeline.
"""

from __future__ import annotations

import numpy as np

from .binning import MISSING_BIN, N_HIST_BINS


def build_histograms(
    codes: np.ndarray,
    sample_idx: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-feature gradient/hessian/count histograms over a node's samples.

    codes: (n_samples, n_features) uint8; sample_idx: row subset (int64).
    Returns (grad_hist, hess_hist, count_hist) with shape (n_features, 256).
    """
    n_features = codes.shape[1]
    sub = codes[sample_idx]
    g = grad[sample_idx]
    h = hess[sample_idx]
    hg = np.empty((n_features, N_HIST_BINS), dtype=np.float64)
    hh = np.empty((n_features, N_HIST_BINS), dtype=np.float64)
    hc = np.empty((n_features, N_HIST_BINS), dtype=np.int64)
    for f in range(n_features):
        col = sub[:, f]
        hg[f] = np.bincount(col, weights=g, minlength=N_HIST_BINS)
        hh[f] = np.bincount(col, weights=h, minlength=N_HIST_BINS)
        hc[f] = np.bincount(col, minlength=N_HIST_BINS)
    return hg, hh, hc


def scan_splits(
    hg: np.ndarray,
    hh: np.ndarray,
    hc: np.ndarray,
    value_bins: np.ndarray,
    total_grad: float,
    total_hess: float,
    total_count: int,
    l2: float,
    min_samples_leaf: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best split per feature from its histograms.

    For each threshold bin b (left = value bins 0..b) two candidates are
    scored, routing missing values left or right. Candidate order is
    (b=0 left, b=0 right, b=1 left, ...) and ties keep the earliest, which
    matches the compiled backend's strict-improvement scan.

    Returns (best_gain, best_bin, missing_left); unsplittable features get
    (-inf, -1, 1).
    """
    n_features = hg.shape[0]
    best_gain = np.full(n_features, -np.inf, dtype=np.float64)
    best_bin = np.full(n_features, -1, dtype=np.int64)
    best_missing_left = np.ones(n_features, dtype=np.int8)
    parent = total_grad * total_grad / (total_hess + l2)

    for f in range(n_features):
        k = int(value_bins[f])
        if k < 2:
            continue
        gl = np.cumsum(hg[f, : k - 1])
        hl = np.cumsum(hh[f, : k - 1])
        cl = np.cumsum(hc[f, : k - 1])
        gm = hg[f, MISSING_BIN]
        hm = hh[f, MISSING_BIN]
        cm = hc[f, MISSING_BIN]

        gl_left = gl + gm
        hl_left = hl + hm
        cl_left = cl + cm
        gr_left = total_grad - gl_left
        hr_left = total_hess - hl_left
        cr_left = total_count - cl_left
        gr_right = total_grad - gl
        hr_right = total_hess - hl
        cr_right = total_count - cl

        ok_left = (
            (cl_left >= min_samples_leaf)
            & (cr_left >= min_samples_leaf)
            & (hl_left + l2 > 0)
            & (hr_left + l2 > 0)
        )
        ok_right = (
            (cl >= min_samples_leaf)
            & (cr_right >= min_samples_leaf)
            & (hl + l2 > 0)
            & (hr_right + l2 > 0)
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            gain_left = gl_left * gl_left / (hl_left + l2) + gr_left * gr_left / (hr_left + l2) - parent
            gain_right = gl * gl / (hl + l2) + gr_right * gr_right / (hr_right + l2) - parent
        gain_left = np.where(ok_left, gain_left, -np.inf)
        gain_right = np.where(ok_right, gain_right, -np.inf)

        cand = np.empty(2 * (k - 1), dtype=np.float64)
        cand[0::2] = gain_left
        cand[1::2] = gain_right
        j = int(np.argmax(cand))
        if cand[j] == -np.inf:
            continue
        best_gain[f] = cand[j]
        best_bin[f] = j >> 1
        best_missing_left[f] = 0 if j & 1 else 1
    return best_gain, best_bin, best_missing_left
