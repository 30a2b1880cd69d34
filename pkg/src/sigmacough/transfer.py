"""Target-task evaluation: subject-aware splits and the 4 classifier x k-fold protocol."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    COVID,
    HEALTHY,
    KINDS,
    ClassifierHypers,
    encode_labels,
    fit_standardizer,
    train_classifier,
)

REPORT_COLUMNS = ("classifier", "fold", "accuracy", "sensitivity", "specificity", "tp", "fp", "tn", "fn")


class TooFewSubjects(ValueError):
    pass


@dataclass
class LabeledFeature:
    features: np.ndarray
    label: str
    subject_id: str
    day_index: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.label not in (COVID, HEALTHY):
            raise ValueError(f"label must be {COVID!r} or {HEALTHY!r}")
        if self.day_index < 0:
            raise ValueError("day_index must be >= 0")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")


def as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([d.features for d in data]), encode_labels([d.label for d in data])


def _subjects_by_class(data) -> dict:
    """Map label -> {subject_id: [sample indices]} in first-appearance order.

    A subject is filed under the label of the majority of its samples
    (ties to covid), so it can never land on both sides of a split.
    """
    members: dict = {}
    for i, d in enumerate(data):
        members.setdefault(d.subject_id, []).append(i)
    strata = {COVID: {}, HEALTHY: {}}
    for sid, idx in members.items():
        n_covid = sum(data[i].label == COVID for i in idx)
        strata[COVID if 2 * n_covid >= len(idx) else HEALTHY][sid] = idx
    return strata


def _shuffled(subjects: dict, rng: np.random.Generator) -> list:
    ids = sorted(subjects)
    return [ids[i] for i in rng.permutation(len(ids))]


def split_by_subject(data, train_fraction: float = 0.7, rng_seed: int = 0):
    """Subject-disjoint (train, test) split, stratified by class.

    Per class, subjects are shuffled and the shortest prefix whose sample
    count is closest to ``train_fraction`` of the class goes to train.
    """
    data = list(data)
    rng = np.random.default_rng(rng_seed)
    train_idx, test_idx = [], []
    for label, subjects in _subjects_by_class(data).items():
        if len(subjects) < 2:
            raise TooFewSubjects(f"class {label!r} has {len(subjects)} subject(s); need at least 2")
        order = _shuffled(subjects, rng)
        sizes = np.cumsum([len(subjects[s]) for s in order])
        target = train_fraction * sizes[-1]
        m = 1 + int(np.argmin(np.abs(sizes[:-1] - target)))
        for s in order[:m]:
            train_idx.extend(subjects[s])
        for s in order[m:]:
            test_idx.extend(subjects[s])
    return [data[i] for i in sorted(train_idx)], [data[i] for i in sorted(test_idx)]


def subject_folds(data, k: int = 5, rng_seed: int = 0) -> list:
    """Fold id per sample. Each class's shuffled subjects go to the fold holding the fewest samples."""
    rng = np.random.default_rng(rng_seed)
    fold_of = np.full(len(data), -1, dtype=np.int64)
    for label, subjects in _subjects_by_class(data).items():
        if len(subjects) < k:
            raise TooFewSubjects(f"class {label!r} has {len(subjects)} subject(s); {k} folds need {k}")
        load = [0] * k
        for s in _shuffled(subjects, rng):
            f = min(range(k), key=lambda j: (load[j], j))
            fold_of[subjects[s]] = f
            load[f] += len(subjects[s])
    return fold_of.tolist()


@dataclass
class FoldResult:
    classifier: str
    fold: int
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else math.nan

    def row(self) -> dict:
        return {"classifier": self.classifier, "fold": self.fold, "accuracy": self.accuracy,
                "sensitivity": self.sensitivity, "specificity": self.specificity,
                "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(y_true, y_pred, classifier: str = "", fold: int = 0) -> FoldResult:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return FoldResult(classifier, fold,
                      tp=int(((y_true == 1) & (y_pred == 1)).sum()),
                      fp=int(((y_true == 0) & (y_pred == 1)).sum()),
                      tn=int(((y_true == 0) & (y_pred == 0)).sum()),
                      fn=int(((y_true == 1) & (y_pred == 0)).sum()))


@dataclass
class EvalReport:
    rows: list
    k: int
    rng_seed: int
    predictions: list = field(default_factory=list)

    def summary(self) -> dict:
        """Per classifier: mean and sample std (ddof=1) of each rate over folds."""
        out = {}
        for kind in KINDS:
            rows = [r for r in self.rows if r.classifier == kind]
            if not rows:
                continue
            out[kind] = {}
            for metric in ("accuracy", "sensitivity", "specificity"):
                vals = np.array([getattr(r, metric) for r in rows])
                std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
                out[kind][metric] = {"mean": float(vals.mean()), "std": std}
        return out

    def mean_accuracy(self, kind: str) -> float:
        return self.summary()[kind]["accuracy"]["mean"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"k": self.k, "rng_seed": self.rng_seed,
               "rows": [r.row() for r in self.rows],
               "summary": self.summary(),
               "predictions": self.predictions}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def cross_validate(data, k: int = 5, hypers: ClassifierHypers = ClassifierHypers(),
                   rng_seed: int = 0, kinds=KINDS) -> EvalReport:
    """Subject-stratified k-fold evaluation of every classifier kind.

    The standardizer for each fold is fit on that fold's training part only.
    Rows come out in (classifier, fold) order.
    """
    data = list(data)
    X, y = as_arrays(data)
    folds = np.array(subject_folds(data, k, rng_seed))
    per_kind = {kind: [] for kind in kinds}
    predictions = []
    for f in range(k):
        train, test = folds != f, folds == f
        std = fit_standardizer(X[train])
        Xtr, Xte = std.apply(X[train]), std.apply(X[test])
        test_ids = np.flatnonzero(test)
        for kind in kinds:
            model = train_classifier(kind, Xtr, y[train], hypers)
            scores = model.scores(Xte)
            pred = (scores >= 0.5).astype(np.int64)
            per_kind[kind].append(confusion(y[test], pred, kind, f))
            for i, sc in zip(test_ids, scores):
                predictions.append({"classifier": kind, "fold": f, "index": int(i),
                                    "subject_id": data[i].subject_id,
                                    "label": data[i].label, "score": float(sc)})
    rows = [r for kind in kinds for r in per_kind[kind]]
    return EvalReport(rows, k, rng_seed, predictions)
