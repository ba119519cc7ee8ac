"""Histogram-based gradient-boosted trees.

Two tasks: squared-error regression and 4-band softmax classification
(one tree per band per round). Trees grow leaf-wise up to ``max_leaves``,
splitting whichever open leaf offers the largest gain. Training is fully
deterministic: no subsampling, ties broken by lowest feature index, then
lowest threshold, then insertion order.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..domain import N_BANDS
from ..errors import ConfigError, DataError
from . import kernels
from .binning import MISSING_BIN, bin_values, fit_bin_edges, n_value_bins

TASK_REGRESSION = "regression"
TASK_BANDS = "bands"

#: Floor applied to class priors so log-priors stay finite.
_MIN_PRIOR = 1e-12


@dataclass(frozen=True)
class GbdtParams:
    """Training hyperparameters (LightGBM-style defaults)."""

    rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 20
    bins: int = 255
    l2: float = 1.0
    early_stopping_fraction: float = 0.0
    early_stopping_rounds: int = 10

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must be in (0, 1]")
        if self.max_leaves < 2:
            raise ConfigError("max_leaves must be >= 2")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 2 <= self.bins <= 255:
            raise ConfigError("bins must be in [2, 255]")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if not 0 <= self.early_stopping_fraction < 1:
            raise ConfigError("early_stopping_fraction must be in [0, 1)")
        if self.early_stopping_rounds < 1:
            raise ConfigError("early_stopping_rounds must be >= 1")

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "learning_rate": self.learning_rate,
            "max_leaves": self.max_leaves,
            "min_samples_leaf": self.min_samples_leaf,
            "bins": self.bins,
            "l2": self.l2,
            "early_stopping_fraction": self.early_stopping_fraction,
            "early_stopping_rounds": self.early_stopping_rounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtParams":
        return cls(**d)


@dataclass(frozen=True)
class TreeNode:
    """Leaf (children None) or internal split node."""

    value: float
    feature: int = -1
    threshold: float = 0.0
    missing_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class Tree:
    """A fitted tree plus its flattened arrays for vectorized prediction."""

    def __init__(self, root: TreeNode):
        self.root = root
        feats: list[int] = []
        thrs: list[float] = []
        mls: list[bool] = []
        lefts: list[int] = []
        rights: list[int] = []
        values: list[float] = []

        def flatten(node: TreeNode) -> int:
            i = len(feats)
            feats.append(node.feature if not node.is_leaf else -1)
            thrs.append(node.threshold)
            mls.append(node.missing_left)
            lefts.append(-1)
            rights.append(-1)
            values.append(node.value)
            if not node.is_leaf:
                lefts[i] = flatten(node.left)
                rights[i] = flatten(node.right)
            return i

        flatten(root)
        self._feature = np.array(feats, dtype=np.int64)
        self._threshold = np.array(thrs, dtype=np.float64)
        self._missing_left = np.array(mls, dtype=bool)
        self._left = np.array(lefts, dtype=np.int64)
        self._right = np.array(rights, dtype=np.int64)
        self._value = np.array(values, dtype=np.float64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int64)
        rows = np.nonzero(self._feature[idx] >= 0)[0]
        while rows.size:
            node = idx[rows]
            f = self._feature[node]
            x = X[rows, f]
            go_left = (x <= self._threshold[node]) | (np.isnan(x) & self._missing_left[node])
            idx[rows] = np.where(go_left, self._left[node], self._right[node])
            rows = rows[self._feature[idx[rows]] >= 0]
        return self._value[idx]


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "missing_left": node.missing_left,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
        "value": node.value,
    }


def _node_from_dict(d: dict) -> TreeNode:
    if "feature" not in d:
        return TreeNode(value=float(d["value"]))
    return TreeNode(
        value=float(d["value"]),
        feature=int(d["feature"]),
        threshold=float(d["threshold"]),
        missing_left=bool(d["missing_left"]),
        left=_node_from_dict(d["left"]),
        right=_node_from_dict(d["right"]),
    )


@dataclass
class _BuildNode:
    """Mutable node used during growth; frozen into TreeNode afterwards."""

    idx: np.ndarray
    value: float
    gain: float
    feature: int
    bin: int
    missing_left: bool
    left: "_BuildNode | None" = None
    right: "_BuildNode | None" = None


class _Grower:
    def __init__(self, codes, value_bins, edges, params, backend):
        self.codes = codes
        self.value_bins = value_bins
        self.edges = edges
        self.params = params
        self.backend = backend

    def candidate(self, idx: np.ndarray) -> _BuildNode:
        p = self.params
        g = float(np.sum(self.grad[idx]))
        h = float(np.sum(self.hess[idx]))
        value = -g / (h + p.l2)
        if idx.size < 2 * p.min_samples_leaf:
            return _BuildNode(idx, value, -np.inf, -1, -1, True)
        hg, hh, hc = self.backend.build_histograms(self.codes, idx, self.grad, self.hess)
        gains, bins, mls = self.backend.scan_splits(
            hg, hh, hc, self.value_bins, g, h, int(idx.size), p.l2, p.min_samples_leaf
        )
        f = int(np.argmax(gains))
        return _BuildNode(idx, value, float(gains[f]), f, int(bins[f]), bool(mls[f]))

    def grow(self, grad, hess, gain_totals, split_counts):
        """One tree on the current gradients. Returns (Tree, leaf updates)."""
        self.grad = grad
        self.hess = hess
        counter = itertools.count()
        root = self.candidate(np.arange(self.codes.shape[0], dtype=np.int64))
        heap = []
        if root.gain > 0.0:
            heapq.heappush(heap, (-root.gain, next(counter), root))
        n_leaves = 1
        while heap and n_leaves < self.params.max_leaves:
            _, _, node = heapq.heappop(heap)
            f, b = node.feature, node.bin
            col = self.codes[node.idx, f]
            left_mask = col <= b
            if node.missing_left:
                left_mask |= col == MISSING_BIN
            left = self.candidate(node.idx[left_mask])
            right = self.candidate(node.idx[~left_mask])
            node.left, node.right = left, right
            gain_totals[f] += node.gain
            split_counts[f] += 1
            for child in (left, right):
                if child.gain > 0.0:
                    heapq.heappush(heap, (-child.gain, next(counter), child))
            n_leaves += 1

        updates: list[tuple[np.ndarray, float]] = []

        def freeze(node: _BuildNode) -> TreeNode:
            if node.left is None:
                updates.append((node.idx, node.value))
                return TreeNode(value=node.value)
            return TreeNode(
                value=node.value,
                feature=node.feature,
                threshold=float(self.edges[node.feature][node.bin]),
                missing_left=node.missing_left,
                left=freeze(node.left),
                right=freeze(node.right),
            )

        return Tree(freeze(root)), updates


@dataclass
class GbdtModel:
    """A trained forest with its preprocessing state and importances.

    For the band task, trees are stored round-major: trees[r * 4 + band].
    ``preprocessing`` is an opaque dict slot for the embedded pipeline state
    (encoder, scaler, band scheme) managed by the predictor layer.
    """

    task: str
    params: GbdtParams
    base_scores: np.ndarray
    trees: list[Tree]
    bin_edges: list[np.ndarray]
    gain_totals: np.ndarray
    split_counts: np.ndarray
    train_loss: list[float]
    feature_names: tuple[str, ...] | None = None
    degenerate: bool = False
    preprocessing: dict | None = None

    @property
    def n_features(self) -> int:
        return len(self.bin_edges)

    @property
    def n_rounds(self) -> int:
        per_round = 1 if self.task == TASK_REGRESSION else N_BANDS
        return len(self.trees) // per_round

    def _as_matrix(self, x) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(
                f"model expects {self.n_features} features, got shape {np.shape(x)}"
            )
        return X, single

    def predict(self, x) -> float | np.ndarray:
        """Regression prediction: base score plus scaled tree outputs."""
        if self.task != TASK_REGRESSION:
            raise ConfigError("predict() is for regression models; use predict_band()")
        X, single = self._as_matrix(x)
        out = np.full(X.shape[0], float(self.base_scores[0]), dtype=np.float64)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return float(out[0]) if single else out

    def predict_scores(self, x) -> np.ndarray:
        if self.task != TASK_BANDS:
            raise ConfigError("predict_scores() is for band models")
        X, single = self._as_matrix(x)
        scores = np.tile(self.base_scores.astype(np.float64), (X.shape[0], 1))
        for i, tree in enumerate(self.trees):
            scores[:, i % N_BANDS] += self.params.learning_rate * tree.predict(X)
        return scores[0] if single else scores

    def predict_proba(self, x) -> np.ndarray:
        scores = np.atleast_2d(self.predict_scores(x))
        p = _softmax(scores)
        return p[0] if np.asarray(x).ndim == 1 else p

    def predict_band(self, x) -> int | np.ndarray:
        p = np.atleast_2d(self.predict_proba(x))
        bands = np.argmax(p, axis=1)
        return int(bands[0]) if np.asarray(x).ndim == 1 else bands

    def feature_importance(self, kind: str = "gain") -> np.ndarray:
        """Normalized importances; all-zero (undefined) for constant models."""
        if kind == "gain":
            raw = self.gain_totals
        elif kind == "split":
            raw = self.split_counts.astype(np.float64)
        else:
            raise ConfigError(f"unknown importance kind {kind!r}")
        total = raw.sum()
        if total <= 0:
            return np.zeros_like(raw, dtype=np.float64)
        return raw / total


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mse(pred: np.ndarray, y: np.ndarray) -> float:
    d = pred - y
    return float(np.mean(d * d))


def _log_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    m = scores.max(axis=1)
    lse = np.log(np.sum(np.exp(scores - m[:, None]), axis=1)) + m
    return float(np.mean(lse - scores[np.arange(labels.size), labels]))


def _validate_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise DataError("X must be 2-D")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise DataError("need at least 2 training rows")
    return X, y


def _holdout_split(n: int, fraction: float) -> int:
    if fraction <= 0:
        return n
    n_fit = n - max(1, int(round(fraction * n)))
    if n_fit < 2:
        raise DataError("early-stopping holdout leaves fewer than 2 training rows")
    return n_fit


def fit_regression(
    X,
    y,
    params: GbdtParams = GbdtParams(),
    feature_names: Sequence[str] | None = None,
    backend=None,
) -> GbdtModel:
    """Squared-error boosting. Training loss is non-increasing per round."""
    backend = backend or kernels
    X, y = _validate_xy(X, y)
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else None
    if names is not None and len(names) != p:
        raise DataError(f"{len(names)} feature names for {p} features")

    if np.all(y == y[0]):
        return GbdtModel(
            task=TASK_REGRESSION,
            params=params,
            base_scores=np.array([float(np.mean(y))]),
            trees=[],
            bin_edges=[np.empty(0)] * p,
            gain_totals=np.zeros(p),
            split_counts=np.zeros(p, dtype=np.int64),
            train_loss=[0.0],
            feature_names=names,
            degenerate=True,
        )

    n_fit = _holdout_split(n, params.early_stopping_fraction)
    Xf, yf = X[:n_fit], y[:n_fit]
    base = float(np.mean(yf))
    edges = fit_bin_edges(Xf, params.bins)
    codes = bin_values(Xf, edges)
    grower = _Grower(codes, n_value_bins(edges), edges, params, backend)

    gain_totals = np.zeros(p, dtype=np.float64)
    split_counts = np.zeros(p, dtype=np.int64)
    pred = np.full(n_fit, base, dtype=np.float64)
    train_loss = [_mse(pred, yf)]
    trees: list[Tree] = []
    hess = np.ones(n_fit, dtype=np.float64)

    monitor = _EarlyStop(params) if n_fit < n else None
    if monitor is not None:
        val_pred = np.full(n - n_fit, base, dtype=np.float64)

    for _ in range(params.rounds):
        grad = pred - yf
        tree, updates = grower.grow(grad, hess, gain_totals, split_counts)
        for idx, value in updates:
            pred[idx] += params.learning_rate * value
        trees.append(tree)
        train_loss.append(_mse(pred, yf))
        if monitor is not None:
            val_pred += params.learning_rate * tree.predict(X[n_fit:])
            if monitor.update(_mse(val_pred, y[n_fit:])):
                break

    if monitor is not None:
        trees = trees[: monitor.best_round]
        train_loss = train_loss[: monitor.best_round + 1]

    return GbdtModel(
        task=TASK_REGRESSION,
        params=params,
        base_scores=np.array([base]),
        trees=trees,
        bin_edges=edges,
        gain_totals=gain_totals,
        split_counts=split_counts,
        train_loss=train_loss,
        feature_names=names,
        degenerate=False,
    )


def fit_multiclass(
    X,
    labels,
    params: GbdtParams = GbdtParams(),
    feature_names: Sequence[str] | None = None,
    backend=None,
) -> GbdtModel:
    """Softmax boosting over the 4 power bands, one tree per band per round."""
    backend = backend or kernels
    labels = np.asarray(labels)
    X, _ = _validate_xy(X, np.zeros(np.shape(X)[0]))
    labels = labels.astype(np.int64).ravel()
    if labels.shape[0] != X.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but labels has {labels.shape[0]}")
    if labels.min() < 0 or labels.max() >= N_BANDS:
        raise DataError(f"labels must be in 0..{N_BANDS - 1}")
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else None
    if names is not None and len(names) != p:
        raise DataError(f"{len(names)} feature names for {p} features")

    counts = np.bincount(labels, minlength=N_BANDS)
    if np.count_nonzero(counts) < 2:
        base = np.log(np.maximum(counts / n, _MIN_PRIOR))
        scores0 = np.tile(base, (n, 1))
        return GbdtModel(
            task=TASK_BANDS,
            params=params,
            base_scores=base,
            trees=[],
            bin_edges=[np.empty(0)] * p,
            gain_totals=np.zeros(p),
            split_counts=np.zeros(p, dtype=np.int64),
            train_loss=[_log_loss(scores0, labels)],
            feature_names=names,
            degenerate=True,
        )

    n_fit = _holdout_split(n, params.early_stopping_fraction)
    Xf, lf = X[:n_fit], labels[:n_fit]
    base = np.log(np.maximum(np.bincount(lf, minlength=N_BANDS) / n_fit, _MIN_PRIOR))
    edges = fit_bin_edges(Xf, params.bins)
    codes = bin_values(Xf, edges)
    grower = _Grower(codes, n_value_bins(edges), edges, params, backend)

    gain_totals = np.zeros(p, dtype=np.float64)
    split_counts = np.zeros(p, dtype=np.int64)
    scores = np.tile(base, (n_fit, 1))
    onehot = np.zeros((n_fit, N_BANDS), dtype=np.float64)
    onehot[np.arange(n_fit), lf] = 1.0
    train_loss = [_log_loss(scores, lf)]
    trees: list[Tree] = []

    monitor = _EarlyStop(params) if n_fit < n else None
    if monitor is not None:
        val_scores = np.tile(base, (n - n_fit, 1))

    for _ in range(params.rounds):
        prob = _softmax(scores)
        round_trees = []
        for c in range(N_BANDS):
            grad = np.ascontiguousarray(prob[:, c] - onehot[:, c])
            hess = np.ascontiguousarray(prob[:, c] * (1.0 - prob[:, c]))
            tree, updates = grower.grow(grad, hess, gain_totals, split_counts)
            for idx, value in updates:
                scores[idx, c] += params.learning_rate * value
            round_trees.append(tree)
        trees.extend(round_trees)
        train_loss.append(_log_loss(scores, lf))
        if monitor is not None:
            for c, tree in enumerate(round_trees):
                val_scores[:, c] += params.learning_rate * tree.predict(X[n_fit:])
            if monitor.update(_log_loss(val_scores, labels[n_fit:])):
                break

    if monitor is not None:
        trees = trees[: monitor.best_round * N_BANDS]
        train_loss = train_loss[: monitor.best_round + 1]

    return GbdtModel(
        task=TASK_BANDS,
        params=params,
        base_scores=base,
        trees=trees,
        bin_edges=edges,
        gain_totals=gain_totals,
        split_counts=split_counts,
        train_loss=train_loss,
        feature_names=names,
        degenerate=False,
    )


class _EarlyStop:
    def __init__(self, params: GbdtParams):
        self.patience = params.early_stopping_rounds
        self.best = np.inf
        self.best_round = 0
        self.round = 0

    def update(self, loss: float) -> bool:
        self.round += 1
        if loss < self.best:
            self.best = loss
            self.best_round = self.round
        return self.round - self.best_round >= self.patience


def grid_search(
    X,
    y,
    task: str,
    grid: dict[str, Sequence],
    base_params: GbdtParams = GbdtParams(),
    holdout_fraction: float = 0.2,
    backend=None,
) -> tuple[GbdtParams, list[tuple[dict, float]]]:
    """Exhaustive hyperparameter sweep scored on a chronological tail holdout.

    Regression is scored by holdout MAE (lower wins), bands by holdout
    accuracy (higher wins). Returns the winning params and every
    (combination, score) pair in evaluation order.
    """
    if task not in (TASK_REGRESSION, TASK_BANDS):
        raise ConfigError(f"unknown task {task!r}")
    if not grid:
        raise ConfigError("empty parameter grid")
    n = np.shape(X)[0]
    n_fit = n - max(1, int(round(holdout_fraction * n)))
    if n_fit < 2:
        raise DataError("grid_search holdout leaves fewer than 2 training rows")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    keys = sorted(grid)
    results: list[tuple[dict, float]] = []
    best_score = None
    best_params = base_params
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = replace(base_params, **dict(zip(keys, combo)))
        if task == TASK_REGRESSION:
            model = fit_regression(X[:n_fit], y[:n_fit], params, backend=backend)
            pred = model.predict(X[n_fit:])
            score = float(np.mean(np.abs(pred - y[n_fit:].astype(np.float64))))
            better = best_score is None or score < best_score
        else:
            model = fit_multiclass(X[:n_fit], y[:n_fit], params, backend=backend)
            bands = model.predict_band(X[n_fit:])
            score = float(np.mean(bands == y[n_fit:]))
            better = best_score is None or score > best_score
        results.append((dict(zip(keys, combo)), score))
        if better:
            best_score = score
            best_params = params
    return best_params, results
