"""Random forest core: CART trees with two heads.

One head is a binary classifier whose predictions are averaged leaf class
frequencies; the other is a quantile regression forest whose leaves retain
the training targets, giving a weighted empirical conditional CDF in the
style of Meinshausen. Both heads share the same tree builder and the same
flat array representation, which keeps serialization and batched
prediction simple.

Determinism contract: (data, hyperparameters, seed) fully determine the
fitted ensemble. Per-tree seeds are spawned from the master seed by index,
so parallel fitting is bit-identical to sequential fitting.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, ModelError, ValidationError

_EPS = 1e-12


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 500
    max_features: int | float | None = None  # None -> sqrt(d) clf, d/3 reg
    min_leaf_size: int | None = None  # None -> 5 clf, 10 reg
    max_depth: int | None = None
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf_size is not None and self.min_leaf_size < 1:
            raise ValidationError(f"min_leaf_size must be >= 1, got {self.min_leaf_size}")

    def resolve(self, n_features: int, task: str) -> tuple[int, int]:
        """Concrete (max_features, min_leaf_size) for this dataset and task."""
        mf = self.max_features
        if mf is None:
            mf = math.ceil(math.sqrt(n_features)) if task == "classify" else math.ceil(n_features / 3)
        elif isinstance(mf, float):
            mf = math.ceil(mf * n_features)
        mf = int(mf)
        if not (1 <= mf <= n_features):
            raise ValidationError(f"max_features resolves to {mf}, outside [1, {n_features}]")
        leaf = self.min_leaf_size
        if leaf is None:
            leaf = 5 if task == "classify" else 10
        return mf, int(leaf)

    def to_state(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_features": self.max_features,
            "min_leaf_size": self.min_leaf_size,
            "max_depth": self.max_depth,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ForestHyperparams":
        return cls(**state)


@dataclass
class Tree:
    """Flat CART tree. feature[i] == -1 marks a leaf.

    Leaves carry a slice [leaf_start, leaf_start + leaf_count) into
    ``payload``, which lists the original training-row indices routed to
    the leaf (with bootstrap multiplicity).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    payload: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index for each row of X (x <= threshold goes left)."""
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            f = self.feature[node]
            active = np.nonzero(f >= 0)[0]
            if active.size == 0:
                return node
            nd = node[active]
            go_right = X[active, f[active]] > self.threshold[nd]
            node[active] = np.where(go_right, self.right[nd], self.left[nd])


def _best_split(Xn, yn, feats, min_leaf, task):
    """Best (feature, threshold, left-locals, right-locals) for one node.

    Gain is Gini decrease (classification) or SSE reduction (regression),
    scanned over midpoint thresholds of the candidate features. Ties go to
    the lowest feature index, then the lowest threshold. Zero-gain splits
    are allowed on impure nodes (needed for XOR-like patterns).
    """
    n = len(yn)
    Xs = Xn[:, feats]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ys = yn[order]

    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    if task == "classify":
        c1 = np.cumsum(ys, axis=0)[:-1].astype(np.float64)
        total1 = float(yn.sum())
        p_l = c1 / nl
        p_r = (total1 - c1) / nr
        parent_p = total1 / n
        parent_imp = 2.0 * parent_p * (1.0 - parent_p)
        child = (nl * 2.0 * p_l * (1.0 - p_l) + nr * 2.0 * p_r * (1.0 - p_r)) / n
        gain = parent_imp - child
    else:
        s = np.cumsum(ys, axis=0)[:-1]
        s2 = np.cumsum(ys * ys, axis=0)[:-1]
        total, total2 = float(yn.sum()), float((yn * yn).sum())
        sse_l = s2 - s * s / nl
        sse_r = (total2 - s2) - (total - s) ** 2 / nr
        parent_sse = total2 - total * total / n
        gain = (parent_sse - sse_l - sse_r) / n

    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        pos = np.arange(1, n)[:, None]
        valid = valid & (pos >= min_leaf) & (n - pos >= min_leaf)
    gain = np.where(valid, gain, -np.inf)

    col_best = gain.max(axis=0)
    best = col_best.max()
    if not np.isfinite(best) or best < 0:
        return None
    j = int(np.argmax(col_best == best))
    i = int(np.argmax(gain[:, j] == best))
    threshold = 0.5 * (xs[i, j] + xs[i + 1, j])
    return int(feats[j]), float(threshold), order[: i + 1, j], order[i + 1 :, j]


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    hyper: ForestHyperparams,
    rng: np.random.Generator,
    task: str,
    row_ids: np.ndarray | None = None,
) -> Tree:
    """Grow a single CART tree on (X, y).

    ``row_ids`` maps local rows back to original training indices (used
    for bootstrap samples); leaf payloads store these ids.
    """
    n, d = X.shape
    if n == 0:
        raise DataError("cannot fit a tree on zero rows")
    if len(y) != n:
        raise DataError(f"X has {n} rows but y has {len(y)}")
    if row_ids is None:
        row_ids = np.arange(n, dtype=np.int32)
    max_features, min_leaf = hyper.resolve(d, task)
    if n < min_leaf:
        raise DataError(f"need at least min_leaf_size={min_leaf} rows, got {n}")

    feature, threshold, left, right = [], [], [], []
    leaf_start, leaf_count, payload = [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_start.append(-1)
        leaf_count.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n, dtype=np.int64), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = y[rows]
        pure = (yn == yn[0]).all()
        depth_ok = hyper.max_depth is None or depth < hyper.max_depth
        split = None
        if not pure and depth_ok and len(rows) >= 2 * min_leaf:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
            split = _best_split(X[rows], yn, feats, min_leaf, task)
        if split is None:
            leaf_start[node] = len(payload)
            leaf_count[node] = len(rows)
            payload.extend(row_ids[rows].tolist())
            continue
        f, thr, loc_l, loc_r = split
        feature[node] = f
        threshold[node] = thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # push right first so left is processed (and numbered) first
        stack.append((rnode, rows[loc_r], depth + 1))
        stack.append((lnode, rows[loc_l], depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        leaf_start=np.asarray(leaf_start, dtype=np.int64),
        leaf_count=np.asarray(leaf_count, dtype=np.int64),
        payload=np.asarray(payload, dtype=np.int32),
    )


def _tree_seeds(hyper: ForestHyperparams) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(hyper.seed).spawn(hyper.n_trees)


def _fit_ensemble(X, y, hyper, task):
    """Fit n_trees trees on bootstrap resamples; returns (trees, oob_mask)."""
    n = len(y)
    seeds = _tree_seeds(hyper)

    def one(seed_seq):
        rng = np.random.default_rng(seed_seq)
        if hyper.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        tree = fit_tree(X[idx], y[idx], hyper, rng, task, row_ids=idx.astype(np.int32))
        in_bag = np.zeros(n, dtype=bool)
        in_bag[idx] = True
        return tree, in_bag

    if hyper.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=hyper.n_jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    trees = [t for t, _ in results]
    in_bag = np.array([m for _, m in results])
    return trees, in_bag


def _leaf_class1_fraction(tree: Tree, y: np.ndarray) -> np.ndarray:
    frac = np.zeros(tree.n_nodes)
    leaves = np.nonzero(tree.feature < 0)[0]
    for node in leaves:
        start, count = tree.leaf_start[node], tree.leaf_count[node]
        frac[node] = float(y[tree.payload[start : start + count]].mean())
    return frac


@dataclass
class ProbClassifier:
    """Binary random forest classifier with probability estimates."""

    trees: list[Tree]
    leaf_p1: list[np.ndarray]
    n_features: int
    hyper: ForestHyperparams
    oob_accuracy: float | None = None

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """(n, 2) class probabilities: averaged leaf class-1 frequencies."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        p1 = np.zeros(len(X))
        for tree, frac in zip(self.trees, self.leaf_p1):
            p1 += frac[tree.apply(X)]
        p1 /= len(self.trees)
        return np.column_stack([1.0 - p1, p1])

    def to_state(self) -> dict:
        state = _trees_to_state(self.trees)
        state["leaf_p1"] = np.concatenate(self.leaf_p1)
        state["n_features"] = np.array(self.n_features)
        state["oob_accuracy"] = np.array(np.nan if self.oob_accuracy is None else self.oob_accuracy)
        return state

    @classmethod
    def from_state(cls, state: dict, hyper: ForestHyperparams) -> "ProbClassifier":
        trees = _trees_from_state(state)
        offsets = np.concatenate([[0], np.cumsum([t.n_nodes for t in trees])])
        leaf_p1 = [state["leaf_p1"][offsets[i] : offsets[i + 1]] for i in range(len(trees))]
        oob = float(state["oob_accuracy"])
        return cls(
            trees=trees,
            leaf_p1=leaf_p1,
            n_features=int(state["n_features"]),
            hyper=hyper,
            oob_accuracy=None if math.isnan(oob) else oob,
        )


def fit_classifier(X: np.ndarray, y: np.ndarray, hyper: ForestHyperparams) -> ProbClassifier:
    """Fit the probability-estimating forest on binary labels.

    Raises ModelError when y is single-class; the Markov layer handles
    that case with its constant-rate fallback.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if not np.isin(classes, [0, 1]).all():
        raise DataError(f"labels must be binary 0/1, got {classes}")
    if len(classes) < 2:
        raise ModelError("labels are single-class; use a constant-rate fallback")
    trees, in_bag = _fit_ensemble(X, y, hyper, "classify")
    leaf_p1 = [_leaf_class1_fraction(t, y) for t in trees]

    oob = None
    if hyper.bootstrap:
        votes = np.zeros(len(y))
        counts = np.zeros(len(y))
        for tree, frac, bag in zip(trees, leaf_p1, in_bag):
            out = ~bag
            if out.any():
                votes[out] += frac[tree.apply(X[out])]
                counts[out] += 1
        covered = counts > 0
        if covered.any():
            pred = (votes[covered] / counts[covered]) > 0.5
            oob = float((pred == (y[covered] == 1)).mean())
    return ProbClassifier(trees=trees, leaf_p1=leaf_p1, n_features=X.shape[1], hyper=hyper, oob_accuracy=oob)


def predict_proba(clf: ProbClassifier, x: np.ndarray) -> np.ndarray:
    """Probability pair for a single feature row."""
    return clf.predict_proba(np.atleast_2d(x))[0]


@dataclass
class QuantileForest:
    """Quantile regression forest with leaf-retained training targets.

    Trees may be grown on log1p-transformed targets (heavy-tailed counts);
    the conditional CDF is always expressed over the raw target support,
    so quantiles are actual training values regardless of the transform.
    """

    trees: list[Tree]
    y_train: np.ndarray
    n_features: int
    hyper: ForestHyperparams
    target_transform: str = "log1p"
    support: np.ndarray = field(default=None, repr=False)
    _leaf_rank: list[np.ndarray] = field(default=None, repr=False)
    _leaf_cdf: list[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.support is None:
            self._build_leaf_cdfs()

    def _build_leaf_cdfs(self):
        self.support = np.unique(self.y_train)
        ranks = np.searchsorted(self.support, self.y_train)
        self._leaf_rank, self._leaf_cdf = [], []
        for tree in self.trees:
            leaves = np.nonzero(tree.feature < 0)[0]
            leaf_rank = np.full(tree.n_nodes, -1, dtype=np.int32)
            leaf_rank[leaves] = np.arange(len(leaves), dtype=np.int32)
            cdf = np.zeros((len(leaves), len(self.support)))
            for k, node in enumerate(leaves):
                start, count = tree.leaf_start[node], tree.leaf_count[node]
                members = tree.payload[start : start + count]
                hist = np.bincount(ranks[members], minlength=len(self.support))
                cdf[k] = np.cumsum(hist) / count
            self._leaf_rank.append(leaf_rank)
            self._leaf_cdf.append(cdf)

    def cdf(self, X: np.ndarray) -> np.ndarray:
        """Weighted empirical conditional CDF over ``support``, per row."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        F = np.zeros((len(X), len(self.support)))
        for tree, rank, cdf in zip(self.trees, self._leaf_rank, self._leaf_cdf):
            F += cdf[rank[tree.apply(X)]]
        F /= len(self.trees)
        return F

    def quantile(self, X: np.ndarray, q) -> np.ndarray:
        """Generalized inverse of the conditional CDF.

        ``q`` may be a scalar or one probability per row. q=0 returns the
        smallest support point with positive conditional mass.
        """
        q = np.asarray(q, dtype=np.float64)
        if np.any((q < 0) | (q > 1)):
            raise ValidationError("quantile levels must lie in [0, 1]")
        F = self.cdf(X)
        q_eff = np.maximum(q, _EPS)  # q=0 -> first point with positive mass
        idx = np.sum(F < q_eff[..., None] - _EPS if q.ndim else F < q_eff - _EPS, axis=-1)
        idx = np.minimum(idx, len(self.support) - 1)
        return self.support[idx]

    def sample(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws: u ~ Uniform(0,1) per row, then quantile(u)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        u = rng.random(len(X))
        return self.quantile(X, u)

    def sample_at(self, X: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF draws at externally supplied uniforms (one per row)."""
        return self.quantile(X, np.asarray(u, dtype=np.float64))

    def to_state(self) -> dict:
        state = _trees_to_state(self.trees)
        state["y_train"] = self.y_train
        state["n_features"] = np.array(self.n_features)
        state["target_transform"] = np.array(self.target_transform)
        return state

    @classmethod
    def from_state(cls, state: dict, hyper: ForestHyperparams) -> "QuantileForest":
        return cls(
            trees=_trees_from_state(state),
            y_train=np.asarray(state["y_train"], dtype=np.float64),
            n_features=int(state["n_features"]),
            hyper=hyper,
            target_transform=str(state["target_transform"]),
        )


def fit_qrf(
    X: np.ndarray,
    y: np.ndarray,
    hyper: ForestHyperparams,
    target_transform: str = "log1p",
) -> QuantileForest:
    """Fit the quantile regression forest on non-negative targets."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise DataError("cannot fit a quantile forest on zero rows")
    if (y < 0).any():
        raise DataError("targets must be non-negative")
    if target_transform == "log1p":
        y_fit = np.log1p(y)
    elif target_transform == "none":
        y_fit = y
    else:
        raise ValidationError(f"unknown target_transform {target_transform!r}")
    trees, _ = _fit_ensemble(X, y_fit, hyper, "regress")
    return QuantileForest(
        trees=trees,
        y_train=y,
        n_features=X.shape[1],
        hyper=hyper,
        target_transform=target_transform,
    )


def qrf_quantile(qrf: QuantileForest, x: np.ndarray, q: float) -> float:
    """Conditional quantile for a single feature row."""
    return float(qrf.quantile(np.atleast_2d(x), q)[0])


def qrf_sample(qrf: QuantileForest, x: np.ndarray, rng: np.random.Generator) -> float:
    """One random draw from the conditional distribution at x."""
    return float(qrf.sample(np.atleast_2d(x), rng)[0])


# -- flat serialization of tree lists ---------------------------------------


def _trees_to_state(trees: list[Tree]) -> dict:
    return {
        "node_counts": np.array([t.n_nodes for t in trees], dtype=np.int64),
        "payload_counts": np.array([len(t.payload) for t in trees], dtype=np.int64),
        "feature": np.concatenate([t.feature for t in trees]),
        "threshold": np.concatenate([t.threshold for t in trees]),
        "left": np.concatenate([t.left for t in trees]),
        "right": np.concatenate([t.right for t in trees]),
        "leaf_start": np.concatenate([t.leaf_start for t in trees]),
        "leaf_count": np.concatenate([t.leaf_count for t in trees]),
        "payload": np.concatenate([t.payload for t in trees]),
    }


def _trees_from_state(state: dict) -> list[Tree]:
    node_off = np.concatenate([[0], np.cumsum(state["node_counts"])])
    pay_off = np.concatenate([[0], np.cumsum(state["payload_counts"])])
    trees = []
    for i in range(len(state["node_counts"])):
        a, b = node_off[i], node_off[i + 1]
        p, r = pay_off[i], pay_off[i + 1]
        trees.append(
            Tree(
                feature=state["feature"][a:b],
                threshold=state["threshold"][a:b],
                left=state["left"][a:b],
                right=state["right"][a:b],
                leaf_start=state["leaf_start"][a:b],
                leaf_count=state["leaf_count"][a:b],
                payload=state["payload"][p:r],
            )
        )
    return trees
