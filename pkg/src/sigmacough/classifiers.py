"""Shallow binary classifiers over transfer features.

All models score the positive (covid) class in [0, 1]; a score of exactly
0.5 resolves to covid. Labels are encoded covid=1, healthy=0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint

COVID, HEALTHY = "covid", "healthy"
KINDS = ("logistic_regression", "knn", "linear_svm", "random_forest")


class SingleClass(ValueError):
    pass


class KTooLarge(ValueError):
    pass


class KEven(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class EmptyTrainingSet(ValueError):
    pass


def encode_labels(labels) -> np.ndarray:
    out = []
    for lbl in labels:
        if lbl not in (COVID, HEALTHY, 0, 1):
            raise ValueError(f"unknown label {lbl!r}")
        out.append(1 if lbl in (COVID, 1) else 0)
    return np.array(out, dtype=np.int64)


def decode_label(y: int) -> str:
    return COVID if y == 1 else HEALTHY


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_xy(X, y, need_both=True):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyTrainingSet("training set is empty")
    if len(y) != len(X):
        raise ValueError("features and labels differ in length")
    if need_both and len(np.unique(y)) < 2:
        raise SingleClass("training data contains a single class")
    return X, y


@dataclass
class Standardizer:
    """Per-feature z-scoring fit on training data only."""

    mean: np.ndarray
    std: np.ndarray
    std_floor: float = 1e-8

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean.shape[0]:
            raise DimensionMismatch(f"expected {self.mean.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std


def fit_standardizer(X, std_floor: float = 1e-8) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyTrainingSet("cannot fit a standardizer on no data")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), std_floor), std_floor)


def apply_standardizer(s: Standardizer, v) -> np.ndarray:
    return s.apply(v)


@dataclass
class ClassifierModel:
    """Base for trained models. ``standardizer`` is applied in :func:`predict` when set."""

    kind = ""
    standardizer: Standardizer | None = field(default=None, kw_only=True)

    @property
    def n_features(self) -> int:
        raise NotImplementedError

    def scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _prepare(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return self.standardizer.apply(X) if self.standardizer is not None else X

    def predict_scores(self, X) -> np.ndarray:
        return self.scores(self._prepare(X))

    def predict_labels(self, X) -> np.ndarray:
        return (self.predict_scores(X) >= 0.5).astype(np.int64)


def predict(model: ClassifierModel, features) -> tuple[str, float]:
    """Label and covid score for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single feature vector")
    score = float(model.predict_scores(x)[0])
    return (COVID if score >= 0.5 else HEALTHY), score


# -- logistic regression ------------------------------------------------------

@dataclass
class LogRegHyper:
    lr: float = 0.1
    epochs: int = 300
    l2: float = 1e-3


@dataclass
class LogisticModel(ClassifierModel):
    kind = "logistic_regression"
    w: np.ndarray = None
    b: float = 0.0

    @property
    def n_features(self):
        return self.w.shape[0]

    def scores(self, X):
        return sigmoid(X @ self.w + self.b)


def logreg_objective(w, b, X, y, l2):
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(loss + 0.5 * l2 * (w @ w))


def logreg_gradient(w, b, X, y, l2):
    err = sigmoid(X @ w + b) - y
    return X.T @ err / len(y) + l2 * w, float(err.mean())


def train_logreg(X, y, hyper: LogRegHyper = LogRegHyper(), history: list | None = None) -> LogisticModel:
    """Full-batch gradient descent on mean log-loss + l2 * |w|^2 / 2, starting from zero."""
    X, y = _check_xy(X, y)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(hyper.epochs):
        if history is not None:
            history.append(logreg_objective(w, b, X, y, hyper.l2))
        gw, gb = logreg_gradient(w, b, X, y, hyper.l2)
        w = w - hyper.lr * gw
        b = b - hyper.lr * gb
    if history is not None:
        history.append(logreg_objective(w, b, X, y, hyper.l2))
    return LogisticModel(w=w, b=b)


# -- k nearest neighbours -----------------------------------------------------

@dataclass
class KnnModel(ClassifierModel):
    kind = "knn"
    X: np.ndarray = None
    y: np.ndarray = None
    k: int = 5

    @property
    def n_features(self):
        return self.X.shape[1]

    def neighbours(self, q: np.ndarray) -> np.ndarray:
        d2 = ((self.X - q) ** 2).sum(axis=1)
        # stable sort: equal distances keep the lower training index first
        return np.argsort(d2, kind="stable")[:self.k]

    def scores(self, X):
        return np.array([self.y[self.neighbours(q)].mean() for q in X])


def train_knn(X, y, k: int = 5) -> KnnModel:
    X, y = _check_xy(X, y, need_both=False)
    if k % 2 == 0:
        raise KEven(f"k={k} must be odd")
    if k < 1 or k > len(y):
        raise KTooLarge(f"k={k} exceeds the {len(y)} training points")
    return KnnModel(X=X.copy(), y=y.copy(), k=k)


# -- linear SVM -----------------------------------------------------------------

@dataclass
class SvmHyper:
    lr: float = 0.01
    epochs: int = 300
    C: float = 1.0


@dataclass
class SvmModel(ClassifierModel):
    kind = "linear_svm"
    w: np.ndarray = None
    b: float = 0.0

    @property
    def n_features(self):
        return self.w.shape[0]

    def margin(self, X):
        return X @ self.w + self.b

    def scores(self, X):
        # fixed unit-slope sigmoid of the signed margin
        return sigmoid(self.margin(X))


def svm_objective(w, b, X, s, C):
    hinge = np.maximum(0.0, 1.0 - s * (X @ w + b))
    return float(0.5 * (w @ w) + C * hinge.mean())


def train_svm(X, y, hyper: SvmHyper = SvmHyper(), init=None, history: list | None = None) -> SvmModel:
    """Subgradient descent on |w|^2/2 + C * mean hinge loss with labels mapped to +-1."""
    X, y = _check_xy(X, y)
    s = 2.0 * y - 1.0
    if init is None:
        w, b = np.zeros(X.shape[1]), 0.0
    else:
        w, b = np.array(init[0], dtype=np.float64), float(init[1])
    n = len(s)
    for _ in range(hyper.epochs):
        if history is not None:
            history.append((svm_objective(w, b, X, s, hyper.C), float(np.linalg.norm(w))))
        active = (s * (X @ w + b) < 1.0) * s
        gw = w - hyper.C * (X.T @ active) / n
        gb = -hyper.C * active.sum() / n
        w = w - hyper.lr * gw
        b = b - hyper.lr * gb
    if history is not None:
        history.append((svm_objective(w, b, X, s, hyper.C), float(np.linalg.norm(w))))
    return SvmModel(w=w, b=b)


# -- random forest --------------------------------------------------------------

@dataclass
class ForestHyper:
    n_trees: int = 25
    max_depth: int | None = 8
    min_leaf: int = 1
    n_feature_sub: int | None = 32  # floor(sqrt(1024))
    bootstrap: bool = True
    rng_seed: int = 0


@dataclass
class Tree:
    """Flat preorder tree; leaves have feature == -1 and carry a 0/1 vote."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vote: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = self.vote[node]
        return out


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    return 0.0 if n == 0 else float(1.0 - ((counts / n) ** 2).sum())


def best_split(X: np.ndarray, y: np.ndarray, features, min_leaf: int = 1):
    """Lowest weighted child Gini over ``features`` (ascending) and midpoint thresholds.

    Returns (feature, threshold, gain) or None when no feature admits a
    split leaving ``min_leaf`` samples on both sides. Ties go to the lowest
    feature index, then the lowest threshold.
    """
    n = len(y)
    features = np.sort(np.asarray(features))
    if n < 2 * min_leaf or len(features) == 0:
        return None
    cols = X[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    vals = np.take_along_axis(cols, order, axis=0)
    pos = np.cumsum(y[order], axis=0)[:-1]                     # covid count left of cut i
    n_left = np.arange(1, n)[:, None].astype(np.float64)
    n_right = n - n_left
    total_pos = y.sum()
    neg_left = n_left - pos
    pos_right = total_pos - pos
    neg_right = n_right - pos_right
    weighted = (n_left - (pos ** 2 + neg_left ** 2) / n_left
                + n_right - (pos_right ** 2 + neg_right ** 2) / n_right) / n
    valid = (vals[1:] > vals[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    weighted = np.where(valid, weighted, np.inf)
    best = weighted.min()
    # (feature, threshold) order: transpose so the flat index walks thresholds within a feature
    hits = np.flatnonzero((weighted <= best + 1e-12).T)
    j, i = divmod(int(hits[0]), n - 1)
    threshold = 0.5 * (vals[i, j] + vals[i + 1, j])
    parent = gini([n - total_pos, total_pos])
    return int(features[j]), float(threshold), parent - float(best)


def build_tree(X, y, hyper: ForestHyper, rng: np.random.Generator) -> Tree:
    d = X.shape[1]
    m = d if hyper.n_feature_sub is None else min(hyper.n_feature_sub, d)
    feature, threshold, left, right, vote = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (vote, 0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yy = y[idx]
        n_pos = int(yy.sum())
        vote[node] = 1 if 2 * n_pos >= len(yy) else 0
        if n_pos in (0, len(yy)) or (hyper.max_depth is not None and depth >= hyper.max_depth):
            continue
        subset = rng.choice(d, size=m, replace=False)
        split = best_split(X[idx], yy, subset, hyper.min_leaf)
        if split is None and m < d:
            rest = np.setdiff1d(np.arange(d), subset)
            split = best_split(X[idx], yy, rest, hyper.min_leaf)
        if split is None:
            continue
        f, t, _ = split
        go_left = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # push right first so the left subtree is numbered first (preorder)
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(vote))


@dataclass
class ForestModel(ClassifierModel):
    kind = "random_forest"
    trees: list = None
    n_features_: int = 0

    @property
    def n_features(self):
        return self.n_features_

    def votes(self, X):
        return np.stack([t.predict(X) for t in self.trees])

    def scores(self, X):
        return self.votes(X).mean(axis=0)


def train_forest(X, y, hyper: ForestHyper = ForestHyper()) -> ForestModel:
    X, y = _check_xy(X, y, need_both=False)
    rng = np.random.default_rng(hyper.rng_seed)
    trees = []
    for _ in range(hyper.n_trees):
        if hyper.bootstrap:
            idx = rng.integers(0, len(y), size=len(y))
        else:
            idx = np.arange(len(y))
        trees.append(build_tree(X[idx], y[idx], hyper, rng))
    return ForestModel(trees=trees, n_features_=X.shape[1])


@dataclass
class ClassifierHypers:
    logreg: LogRegHyper = field(default_factory=LogRegHyper)
    knn_k: int = 5
    svm: SvmHyper = field(default_factory=SvmHyper)
    forest: ForestHyper = field(default_factory=ForestHyper)


def train_classifier(kind: str, X, y, hypers: ClassifierHypers = ClassifierHypers()) -> ClassifierModel:
    if kind == "logistic_regression":
        return train_logreg(X, y, hypers.logreg)
    if kind == "knn":
        return train_knn(X, y, hypers.knn_k)
    if kind == "linear_svm":
        return train_svm(X, y, hypers.svm)
    if kind == "random_forest":
        return train_forest(X, y, hypers.forest)
    raise ValueError(f"unknown classifier kind {kind!r}")


# -- persistence ----------------------------------------------------------------

def model_tensors(model: ClassifierModel) -> tuple[dict, dict]:
    """Named tensors plus scalar config for the shared container format."""
    tensors, config = {}, {}
    if isinstance(model, (LogisticModel, SvmModel)):
        tensors["w"] = model.w
        config["b"] = model.b
    elif isinstance(model, KnnModel):
        tensors["X"], tensors["y"] = model.X, model.y
        config["k"] = model.k
    elif isinstance(model, ForestModel):
        config["n_trees"] = len(model.trees)
        config["n_features"] = model.n_features_
        for i, t in enumerate(model.trees):
            for name in ("feature", "threshold", "left", "right", "vote"):
                tensors[f"tree{i}.{name}"] = getattr(t, name)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    if model.standardizer is not None:
        tensors["standardizer.mean"] = model.standardizer.mean
        tensors["standardizer.std"] = model.standardizer.std
        config["std_floor"] = model.standardizer.std_floor
    return tensors, config


def model_from_tensors(kind: str, tensors: dict, config: dict) -> ClassifierModel:
    if kind == "logistic_regression":
        model = LogisticModel(w=tensors["w"], b=float(config["b"]))
    elif kind == "linear_svm":
        model = SvmModel(w=tensors["w"], b=float(config["b"]))
    elif kind == "knn":
        model = KnnModel(X=tensors["X"], y=tensors["y"].astype(np.int64), k=int(config["k"]))
    elif kind == "random_forest":
        trees = [Tree(*(tensors[f"tree{i}.{name}"] for name in ("feature", "threshold", "left", "right", "vote")))
                 for i in range(int(config["n_trees"]))]
        model = ForestModel(trees=trees, n_features_=int(config["n_features"]))
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    if "standardizer.mean" in tensors:
        model.standardizer = Standardizer(tensors["standardizer.mean"], tensors["standardizer.std"],
                                          float(config.get("std_floor", 1e-8)))
    return model


def save_model(path, model: ClassifierModel, rng_seed: int | None = None) -> str:
    tensors, config = model_tensors(model)
    config["classifier"] = model.kind
    return checkpoint.save(path, "classifier", tensors, config, rng_seed)


def load_model(path) -> ClassifierModel:
    tensors, header = checkpoint.load(path, kind="classifier")
    config = header["config"]
    return model_from_tensors(config.get("classifier", ""), tensors, config)
