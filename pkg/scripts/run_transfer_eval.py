#!/usr/bin/env python3
"""Cross-validate the four shallow classifiers on CNN features of the synthetic cough corpus.

Needs a source model, e.g. from run_source_training.py:

    python scripts/run_transfer_eval.py --model runs/source/model.json --out runs/transfer
"""

from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from sigmacough.features import mfcc
from sigmacough.pca import ScatterPoint, emit_scatter, fit_pca, project
from sigmacough.pipeline import load_source_model, transfer_features
from sigmacough.synth import SynthSpec, gen_cough_corpus
from sigmacough.transfer import LabeledFeature, as_arrays, cross_validate


@dataclass
class Experiment:
    model: str = "runs/source/model.json"
    seed: int = 0
    n_per_class: int = 100
    folds: int = 5
    out: str = "runs/transfer"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, default in asdict(Experiment()).items():
        p.add_argument("--" + name.replace("_", "-"), type=type(default), default=default)
    exp = Experiment(**vars(p.parse_args()))
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)

    params, scaler, mfcc_cfg = load_source_model(exp.model)
    corpus = gen_cough_corpus(SynthSpec(rng_seed=exp.seed, n_per_class=exp.n_per_class))
    mats = np.stack([mfcc(seg, mfcc_cfg) for seg, *_ in corpus])
    feats = transfer_features(params, scaler, mats)
    data = [LabeledFeature(f, lbl, sid, day) for f, (_, lbl, sid, day) in zip(feats, corpus)]

    report = cross_validate(data, exp.folds, rng_seed=exp.seed)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    for kind, s in report.summary().items():
        print(f"{kind:20s} " + "  ".join(f"{m} {v['mean']:.3f}+-{v['std']:.3f}" for m, v in s.items()))

    X, _ = as_arrays(data)
    coords = project(fit_pca(X, 2), X)
    points = [ScatterPoint(float(c[0]), float(c[1]), d.label, d.subject_id, d.day_index)
              for c, d in zip(coords, data)]
    emit_scatter(points, out / "scatter", highlight_subject=data[0].subject_id)
    print(f"wrote report and scatter to {out}")


if __name__ == "__main__":
    main()
