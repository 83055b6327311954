"""Bagged CART classification forest (Gini impurity, sqrt(F) features per split)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from gsnorm._binio import FormatError, Reader, Writer
from gsnorm.cube import atomic_write
from gsnorm.rng import stream

FOREST_MAGIC = b"GSNF"
LEAF = 0xFFFF
N_CLASSES = 3


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 0  # 0 = grow to purity
    max_features: int = 0  # 0 = floor(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0
    include_delta: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0 or self.max_features < 0:
            raise ValueError("max_depth and max_features must be >= 0")


@dataclass
class Tree:
    """Flat node arrays; leaves have ``feature == LEAF``."""

    feature: np.ndarray  # uint16
    threshold: np.ndarray  # float32; go left when x <= threshold
    left: np.ndarray  # uint32
    right: np.ndarray  # uint32
    leaf_class: np.ndarray  # uint8, majority class of the node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.arange(len(X))
        while len(active):
            f = self.feature[node[active]]
            inner = f != LEAF
            active = active[inner]
            if not len(active):
                break
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
        return self.leaf_class[node]


@dataclass
class Forest:
    config: ForestConfig
    n_features: int
    trees: list[Tree] = field(default_factory=list)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Forest):
            return NotImplemented
        if self.config != other.config or self.n_features != other.n_features or len(self.trees) != len(other.trees):
            return False
        for a, b in zip(self.trees, other.trees):
            for name in ("feature", "threshold", "left", "right", "leaf_class"):
                x, y = getattr(a, name), getattr(b, name)
                if x.shape != y.shape or x.tobytes() != y.tobytes():
                    return False
        return True


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray):
    """Lowest weighted-Gini split over ``features``; ``None`` when none separates values."""
    n = len(y)
    onehot = np.eye(N_CLASSES, dtype=np.int64)[y]
    best = None
    best_score = np.inf
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        left_counts = np.cumsum(onehot[order], axis=0)[:-1]
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        right_counts = left_counts[-1] + onehot[order[-1]] - left_counts
        gl = nl - np.sum(left_counts**2, axis=1) / nl
        gr = nr - np.sum(right_counts**2, axis=1) / nr
        score = np.where(valid, gl + gr, np.inf)
        i = int(np.argmin(score))
        if score[i] < best_score:
            best_score = score[i]
            lo, hi = xs[i], xs[i + 1]
            thr = np.float32((np.float64(lo) + np.float64(hi)) / 2)
            if not (lo <= thr < hi):
                thr = lo
            best = (int(f), thr)
    return best


def _grow(X, y, config: ForestConfig, rng: np.random.Generator, n_try: int) -> Tree:
    feature, threshold, left, right, leaf = [], [], [], [], []

    def new_node(counts) -> int:
        feature.append(LEAF)
        threshold.append(np.float32(0))
        left.append(0)
        right.append(0)
        leaf.append(int(np.argmax(counts)))
        return len(feature) - 1

    root_counts = np.bincount(y, minlength=N_CLASSES)
    stack = [(new_node(root_counts), np.arange(len(y)), 0)]
    F = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        if np.all(yy == yy[0]) or (config.max_depth and depth >= config.max_depth):
            continue
        # draw features before the data decides anything so the stream stays aligned
        feats = rng.permutation(F)[:n_try]
        split = _best_split(X[idx], yy, feats)
        if split is None:
            rest = np.setdiff1d(np.arange(F), feats)
            split = _best_split(X[idx], yy, rng.permutation(rest)) if len(rest) else None
            if split is None:
                continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        l_node = new_node(np.bincount(y[li], minlength=N_CLASSES))
        r_node = new_node(np.bincount(y[ri], minlength=N_CLASSES))
        feature[node], threshold[node], left[node], right[node] = f, thr, l_node, r_node
        stack.append((r_node, ri, depth + 1))
        stack.append((l_node, li, depth + 1))
    return Tree(
        np.array(feature, dtype=np.uint16),
        np.array(threshold, dtype=np.float32),
        np.array(left, dtype=np.uint32),
        np.array(right, dtype=np.uint32),
        np.array(leaf, dtype=np.uint8),
    )


def forest_train(X, y, config: ForestConfig = ForestConfig()) -> Forest:
    """Fit ``config.n_trees`` CART trees on bootstrap resamples of ``(X, y)``."""
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("forest needs a non-empty 2-D feature matrix")
    if len(y) != len(X):
        raise ValueError("feature and label counts differ")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if X.shape[1] >= LEAF:
        raise ValueError("too many features for the u16 node encoding")
    if len(np.unique(y)) == 1:
        warnings.warn("single-class training data; forest predicts a constant", stacklevel=2)
    F = X.shape[1]
    n_try = config.max_features or max(1, int(math.isqrt(F)))
    trees = []
    for t in range(config.n_trees):
        rng = stream(config.seed, "forest", t)
        idx = rng.integers(0, len(y), size=len(y)) if config.bootstrap else np.arange(len(y))
        trees.append(_grow(X[idx], y[idx], config, rng, min(n_try, F)))
    return Forest(config, F, trees)


def forest_predict(forest: Forest, X) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote over trees; returns ``(labels, vote_fractions)``. Ties go to the lowest class."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    votes = np.zeros((len(X), N_CLASSES), dtype=np.int64)
    rows = np.arange(len(X))
    for tree in forest.trees:
        np.add.at(votes, (rows, tree.apply(X)), 1)
    return np.argmax(votes, axis=1).astype(np.uint8), votes / len(forest.trees)


# --- GSNF forest file -----------------------------------------------------------


def write_forest(forest: Forest, sink: BinaryIO) -> int:
    c = forest.config
    w = Writer(sink)
    w.raw(FOREST_MAGIC)
    w.pack("H", 1)
    w.pack("IIIBQBI", c.n_trees, c.max_depth, c.max_features, int(c.bootstrap), c.seed & (2**64 - 1), int(c.include_delta), forest.n_features)
    w.pack("I", len(forest.trees))
    node = np.dtype([("feature", "<u2"), ("threshold", "<f4"), ("left", "<u4"), ("right", "<u4"), ("leaf", "u1")])
    for t in forest.trees:
        rec = np.zeros(len(t.feature), dtype=node)
        rec["feature"], rec["threshold"], rec["left"], rec["right"], rec["leaf"] = (
            t.feature, t.threshold, t.left, t.right, t.leaf_class,
        )
        w.pack("I", len(rec))
        w.raw(rec.tobytes())
    return w.count


def read_forest(source: BinaryIO) -> Forest:
    r = Reader(source)
    r.header(FOREST_MAGIC)
    n_trees, max_depth, max_features, bootstrap, seed, include_delta, n_features = r.unpack("IIIBQBI", "forest config")
    config = ForestConfig(n_trees, max_depth, max_features, bool(bootstrap), seed, bool(include_delta))
    count = r.one("I", "tree count")
    node = np.dtype([("feature", "<u2"), ("threshold", "<f4"), ("left", "<u4"), ("right", "<u4"), ("leaf", "u1")])
    trees = []
    for _ in range(count):
        n = r.one("I", "node count")
        rec = np.frombuffer(r.raw(n * node.itemsize, "tree nodes"), dtype=node)
        t = Tree(
            rec["feature"].astype(np.uint16),
            rec["threshold"].astype(np.float32),
            rec["left"].astype(np.uint32),
            rec["right"].astype(np.uint32),
            rec["leaf"].astype(np.uint8),
        )
        inner = t.feature != LEAF
        if np.any(t.feature[inner] >= n_features) or np.any(t.left[inner] >= n) or np.any(t.right[inner] >= n):
            raise FormatError("tree node references out of range")
        trees.append(t)
    r.expect_eof("forest")
    return Forest(config, n_features, trees)


def save_forest(forest: Forest, path) -> int:
    return atomic_write(path, write_forest, forest)


def load_forest(path) -> Forest:
    with open(path, "rb") as fh:
        return read_forest(fh)
