# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled histogram kernels.

Drop-in replacement for ``_hist_py``: same signatures, bit-identical
outputs. Accumulations run in the same sample/bin order and the gain
expressions use the same operation order as the numpy reference (the build
disables FMA contraction), so a model fit is reproducible across backends.
"""

from libc.math cimport INFINITY
from libc.stdint cimport int64_t

import numpy as np

MISSING_BIN = 255
N_HIST_BINS = 256

cdef Py_ssize_t _MISSING = 255


def build_histograms(
    const unsigned char[:, ::1] codes,
    const int64_t[::1] sample_idx,
    const double[::1] grad,
    const double[::1] hess,
):
    """Per-feature gradient/hessian/count histograms over a node's samples."""
    cdef Py_ssize_t n_features = codes.shape[1]
    cdef Py_ssize_t m = sample_idx.shape[0]
    hg_arr = np.zeros((n_features, N_HIST_BINS), dtype=np.float64)
    hh_arr = np.zeros((n_features, N_HIST_BINS), dtype=np.float64)
    hc_arr = np.zeros((n_features, N_HIST_BINS), dtype=np.int64)
    cdef double[:, ::1] hg = hg_arr
    cdef double[:, ::1] hh = hh_arr
    cdef int64_t[:, ::1] hc = hc_arr
    cdef Py_ssize_t j, f, i
    cdef unsigned char b
    cdef double g, h
    with nogil:
        for j in range(m):
            i = <Py_ssize_t> sample_idx[j]
            g = grad[i]
            h = hess[i]
            for f in range(n_features):
                b = codes[i, f]
                hg[f, b] += g
                hh[f, b] += h
                hc[f, b] += 1
    return hg_arr, hh_arr, hc_arr


def scan_splits(
    const double[:, ::1] hg,
    const double[:, ::1] hh,
    const int64_t[:, ::1] hc,
    const int64_t[::1] value_bins,
    double total_grad,
    double total_hess,
    int64_t total_count,
    double l2,
    int64_t min_samples_leaf,
):
    """Best split per feature; see the numpy reference for the contract."""
    cdef Py_ssize_t n_features = hg.shape[0]
    gain_arr = np.full(n_features, -np.inf, dtype=np.float64)
    bin_arr = np.full(n_features, -1, dtype=np.int64)
    ml_arr = np.ones(n_features, dtype=np.int8)
    cdef double[::1] out_gain = gain_arr
    cdef int64_t[::1] out_bin = bin_arr
    cdef signed char[::1] out_ml = ml_arr
    cdef double parent = total_grad * total_grad / (total_hess + l2)
    cdef Py_ssize_t f, b, k
    cdef double gm, hm, gl, hl, gain, best
    cdef double gl_left, hl_left, gr_left, hr_left, gr_right, hr_right
    cdef int64_t cm, cl, cl_left, cr_left, cr_right
    cdef int64_t best_bin
    cdef signed char best_ml
    with nogil:
        for f in range(n_features):
            k = <Py_ssize_t> value_bins[f]
            if k < 2:
                continue
            gm = hg[f, _MISSING]
            hm = hh[f, _MISSING]
            cm = hc[f, _MISSING]
            gl = 0.0
            hl = 0.0
            cl = 0
            best = -INFINITY
            best_bin = -1
            best_ml = 1
            for b in range(k - 1):
                gl = gl + hg[f, b]
                hl = hl + hh[f, b]
                cl = cl + hc[f, b]
                gl_left = gl + gm
                hl_left = hl + hm
                cl_left = cl + cm
                gr_left = total_grad - gl_left
                hr_left = total_hess - hl_left
                cr_left = total_count - cl_left
                if cl_left >= min_samples_leaf and cr_left >= min_samples_leaf \
                        and hl_left + l2 > 0 and hr_left + l2 > 0:
                    gain = gl_left * gl_left / (hl_left + l2) + gr_left * gr_left / (hr_left + l2) - parent
                    if gain > best:
                        best = gain
                        best_bin = b
                        best_ml = 1
                gr_right = total_grad - gl
                hr_right = total_hess - hl
                cr_right = total_count - cl
                if cl >= min_samples_leaf and cr_right >= min_samples_leaf \
                        and hl + l2 > 0 and hr_right + l2 > 0:
                    gain = gl * gl / (hl + l2) + gr_right * gr_right / (hr_right + l2) - parent
                    if gain > best:
                        best = gain
                        best_bin = b
                        best_ml = 0
            if best_bin >= 0:
                out_gain[f] = best
                out_bin[f] = best_bin
                out_ml[f] = best_ml
    return gain_arr, bin_arr, ml_arr
