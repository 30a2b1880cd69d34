"""``sigmacough`` command line: synth, train-source, evaluate, predict, serve, export.

Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audio, classifiers, convnet, synth
from .audio import AudioClip, AudioError, write_wav
from .classifiers import ClassifierHypers, KINDS
from .config import ConfigError, load_config
from .features import MfccConfig
from .pca import ScatterPoint, emit_scatter, fit_pca, project
from .pipeline import (InputScaler, clip_features, load_source_model, save_source_model,
                       transfer_features, wav_features)
from .transfer import LabeledFeature, as_arrays, cross_validate

log = logging.getLogger("sigmacough")


class UsageError(Exception):
    """Bad arguments or configuration (exit code 2)."""


class DataError(Exception):
    """Runtime or data problem (exit code 1)."""


def _cfg(args, key, cast=str):
    value = args.config_values.get(key, "")
    return cast(value) if value != "" else None


def _pick(cli_value, args, key, default, cast=str):
    if cli_value is not None:
        return cli_value
    from_cfg = _cfg(args, key, cast)
    return default if from_cfg is None else from_cfg


def _require_dir(path, what) -> Path:
    p = Path(path) if path else None
    if p is None or not p.is_dir():
        raise UsageError(f"{what} {path!r} does not exist")
    return p


def _require_file(path, what) -> Path:
    p = Path(path) if path else None
    if p is None or not p.is_file():
        raise UsageError(f"{what} {path!r} does not exist")
    return p


def _mfcc_config(args) -> MfccConfig:
    cfg = MfccConfig()
    n_mel = _cfg(args, "n_mel_filters", int)
    n_coef = _cfg(args, "n_coefficients", int)
    if n_mel is not None:
        cfg = replace(cfg, n_mel_filters=n_mel)
    if n_coef is not None:
        cfg = replace(cfg, n_coefficients=n_coef)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(f"invalid MFCC configuration: {exc}") from None
    return cfg


# -- synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    spec = synth.SynthSpec(rng_seed=args.seed, n_per_class=args.n_per_class)
    digit_spec = replace(spec, n_per_class=args.digits_per_class or args.n_per_class)
    try:
        cough_dir, digit_dir = out / "cough", out / "digits"
        cough_dir.mkdir(parents=True, exist_ok=True)
        digit_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for i, (seg, label, subject, day) in enumerate(synth.gen_cough_corpus(spec)):
            name = f"cough_{i:05d}.wav"
            (cough_dir / name).write_bytes(write_wav(AudioClip(seg.samples, audio.TARGET_RATE)))
            rows.append((name, label, subject, day))
        _write_csv(cough_dir / "labels.csv", ("file", "label", "subject_id", "day_index"), rows)
        rows = []
        for i, (seg, digit) in enumerate(synth.gen_digit_corpus(digit_spec)):
            name = f"digit_{i:05d}.wav"
            (digit_dir / name).write_bytes(write_wav(AudioClip(seg.samples, audio.TARGET_RATE)))
            rows.append((name, digit))
        _write_csv(digit_dir / "labels.csv", ("file", "digit"), rows)
    except OSError as exc:
        raise DataError(f"cannot write corpus: {exc}") from None
    print(f"wrote {2 * spec.n_per_class} cough clips to {cough_dir} and "
          f"{10 * digit_spec.n_per_class} digit clips to {digit_dir}")
    return 0


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_labels(corpus: Path) -> list:
    labels = corpus / "labels.csv"
    if not labels.is_file():
        raise UsageError(f"corpus {corpus} has no labels.csv")
    with open(labels, newline="") as fh:
        return list(csv.DictReader(fh))


def _load_matrices(corpus: Path, rows, mfcc_cfg):
    """MFCC matrices for every full segment of every listed clip, with the row each came from."""
    mats, owners = [], []
    for row in rows:
        try:
            m = wav_features((corpus / row["file"]).read_bytes(), mfcc_cfg, row["file"])
        except (OSError, AudioError) as exc:
            raise DataError(f"{row['file']}: {exc}") from None
        mats.extend(m)
        owners.extend([row] * len(m))
    if not mats:
        raise DataError(f"no full 0.99 s segments found under {corpus}")
    return np.stack(mats), owners


# -- train-source -------------------------------------------------------------------

def cmd_train_source(args) -> int:
    corpus = _require_dir(_pick(args.corpus, args, "corpus_root", None), "digit corpus")
    ckpt = _pick(args.checkpoint, args, "checkpoint", None)
    if not ckpt:
        raise UsageError("--checkpoint is required")
    mfcc_cfg = _mfcc_config(args)
    tcfg = convnet.TrainConfig(
        learning_rate=_pick(args.learning_rate, args, "learning_rate", 0.01, float),
        batch_size=_pick(args.batch_size, args, "batch_size", 32, int),
        epochs=_pick(args.epochs, args, "epochs", 30, int),
        rng_seed=args.seed,
    )
    rows = _read_labels(corpus)
    X, owners = _load_matrices(corpus, rows, mfcc_cfg)
    y = np.array([int(r["digit"]) for r in owners])
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(y))
    n_hold = int(round(args.holdout * len(y)))
    hold, train = order[:n_hold], order[n_hold:]
    scaler = InputScaler.fit(X[train])
    Xs = scaler(X)

    def report(stats):
        log.info("epoch %d loss %.4f train_acc %.4f", stats.epoch, stats.loss, stats.accuracy)

    try:
        result = convnet.train_source((Xs[train], y[train]), tcfg, progress=report)
    except convnet.DegenerateDataset as exc:
        raise DataError(str(exc)) from None
    held = float((convnet.predict_digits(result.params, Xs[hold]) == y[hold]).mean()) if n_hold else float("nan")
    try:
        digest = save_source_model(ckpt, result.params, scaler, mfcc_cfg, tcfg)
        log_path = Path(args.log) if args.log else Path(str(ckpt) + ".log.csv")
        _write_csv(log_path, ("epoch", "loss", "accuracy"),
                   [(e.epoch, repr(e.loss), repr(e.accuracy)) for e in result.log])
    except OSError as exc:
        raise DataError(f"cannot write checkpoint: {exc}") from None
    final = result.log[-1]
    print(f"final training accuracy {final.accuracy:.4f}; held-out accuracy {held:.4f} "
          f"({n_hold} clips); checkpoint sha256 {digest}")
    return 0


# -- evaluate -----------------------------------------------------------------------

def _cough_dataset(corpus: Path, ckpt: Path):
    params, scaler, mfcc_cfg = load_source_model(ckpt)
    rows = _read_labels(corpus)
    X, owners = _load_matrices(corpus, rows, mfcc_cfg)
    feats = transfer_features(params, scaler, X)
    return [LabeledFeature(f, r["label"], r["subject_id"], int(r["day_index"])) for f, r in zip(feats, owners)]


def _hypers(args) -> ClassifierHypers:
    h = ClassifierHypers()
    k = _cfg(args, "knn_k", int)
    n_trees = _cfg(args, "n_trees", int)
    if k is not None:
        h.knn_k = k
    h.forest = replace(h.forest, rng_seed=args.seed, n_trees=n_trees or h.forest.n_trees)
    return h


def cmd_evaluate(args) -> int:
    corpus = _require_dir(_pick(args.corpus, args, "corpus_root", None), "cough corpus")
    ckpt = _require_file(_pick(args.checkpoint, args, "checkpoint", None), "checkpoint")
    out = Path(_pick(args.report_dir, args, "report_dir", "report"))
    data = _cough_dataset(corpus, ckpt)
    labels = {d.label for d in data}
    if len(labels) < 2:
        raise DataError(f"SingleClass: corpus only contains {labels.pop()!r} samples")
    hypers = _hypers(args)
    try:
        report = cross_validate(data, args.folds, hypers, rng_seed=args.seed)
    except ValueError as exc:
        raise DataError(f"{type(exc).__name__}: {exc}") from None

    X, y = as_arrays(data)
    pca = fit_pca(X, 2)
    coords = project(pca, X)
    points = [ScatterPoint(float(c[0]), float(c[1]), d.label, d.subject_id, d.day_index)
              for c, d in zip(coords, data)]
    highlight = args.highlight_subject or _most_longitudinal(data)

    std = classifiers.fit_standardizer(X)
    final = classifiers.train_classifier(args.classifier, std.apply(X), y, hypers)
    final.standardizer = std
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.json").write_text(report.to_json())
        emit_scatter(points, out / "scatter", highlight)
        classifiers.save_model(out / "classifier.json", final, rng_seed=args.seed)
    except OSError as exc:
        raise DataError(f"cannot write report: {exc}") from None
    for kind, s in report.summary().items():
        acc = s["accuracy"]
        print(f"{kind:20s} accuracy {acc['mean']:.3f} +- {acc['std']:.3f}")
    print(f"wrote {len(report.rows)} report rows and scatter plots to {out}")
    return 0


def _most_longitudinal(data) -> str | None:
    days: dict = {}
    for d in data:
        days.setdefault(d.subject_id, set()).add(d.day_index)
    if not days:
        return None
    return min(days, key=lambda s: (-len(days[s]), s))


# -- predict ------------------------------------------------------------------------

def cmd_predict(args) -> int:
    ckpt = _require_file(_pick(args.checkpoint, args, "checkpoint", None), "checkpoint")
    model_path = _require_file(args.classifier_file, "classifier file")
    wav = _require_file(args.wav, "wav file")
    params, scaler, mfcc_cfg = load_source_model(ckpt)
    model = classifiers.load_model(model_path)
    try:
        clip = audio.parse_wav(wav.read_bytes())
        mats = clip_features(clip, mfcc_cfg, wav.name)
    except AudioError as exc:
        raise DataError(f"InvalidAudio: {exc}") from None
    if len(mats) == 0:
        raise DataError("InvalidAudio: recording is shorter than one 0.99 s segment")
    scores = model.predict_scores(transfer_features(params, scaler, mats))
    for i, s in enumerate(scores):
        print(f"segment {i} score {s:.6f}")
    pooled = float(scores.mean() if args.pool == "mean" else scores.max())
    label = classifiers.COVID if pooled >= 0.5 else classifiers.HEALTHY
    print(f"clip {label} score {pooled:.6f}")
    return 0


# -- serve / export -----------------------------------------------------------------

def _service_config(args):
    from .sigma.server import ServiceConfig

    cfg = ServiceConfig.from_mapping(args.config_values)
    if getattr(args, "bind", None):
        cfg.bind_addr = args.bind
    if getattr(args, "storage_root", None):
        cfg.storage_root = args.storage_root
    return cfg


def cmd_serve(args) -> int:
    from .sigma.server import BindFailure, make_server
    from .sigma.store import StorageUnavailable

    try:
        server = make_server(_service_config(args))
    except (BindFailure, StorageUnavailable) as exc:
        raise DataError(str(exc)) from None
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    worker = threading.Thread(target=server.serve_forever, name="sigma-http")
    worker.start()
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    stop.wait()
    server.shutdown_gracefully()
    worker.join()
    print("shut down cleanly", flush=True)
    return 0


def cmd_export(args) -> int:
    from .sigma.store import SampleStore

    cfg = _service_config(args)
    store = SampleStore(cfg.storage_root)
    try:
        bundle = store.daily_export(args.date)
    except ValueError as exc:
        raise UsageError(f"invalid date {args.date!r}: {exc}") from None
    finally:
        store.close()
    out = Path(args.out or f"sigma-{bundle.date}.tar")
    out.write_bytes(bundle.tar_bytes)
    print(f"{len(bundle.manifest['entries'])} record(s); manifest {bundle.manifest['manifest_digest']}; "
          f"wrote {out}")
    return 0


# -- argument parsing ----------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be a non-negative integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        # subcommands repeat the flags with SUPPRESS so they don't clobber values given earlier
        parser.add_argument("--config", default=default(None), help="key=value config file")
        parser.add_argument("--seed", type=_seed, default=default(0), help="RNG seed (default 0)")
        parser.add_argument("--verbose", "-v", action="store_true", default=default(False))

    p = argparse.ArgumentParser(prog="sigmacough", description=__doc__.splitlines()[0])
    global_flags(p, lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, lambda v: argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic digit and cough corpora")
    s.add_argument("--out", required=True)
    s.add_argument("--n-per-class", type=int, default=100)
    s.add_argument("--digits-per-class", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-source", parents=[common], help="train the spoken-digit CNN")
    s.add_argument("--corpus")
    s.add_argument("--checkpoint")
    s.add_argument("--epochs", type=int)
    s.add_argument("--learning-rate", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--holdout", type=float, default=0.2)
    s.add_argument("--log", help="training log CSV (default <checkpoint>.log.csv)")
    s.set_defaults(func=cmd_train_source)

    s = sub.add_parser("evaluate", parents=[common], help="cross-validate the four classifiers")
    s.add_argument("--corpus")
    s.add_argument("--checkpoint")
    s.add_argument("--report-dir")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--classifier", choices=KINDS, default="logistic_regression",
                   help="kind fit on the full corpus and saved as classifier.json")
    s.add_argument("--highlight-subject")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", parents=[common], help="score one WAV recording")
    s.add_argument("--checkpoint")
    s.add_argument("--classifier-file", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--pool", choices=("mean", "max"), default="mean")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("serve", parents=[common], help="run the sample ingestion service")
    s.add_argument("--bind")
    s.add_argument("--storage-root")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("export", parents=[common], help="write the daily open-data bundle")
    s.add_argument("--date", required=True, help="UTC day, YYYY-MM-DD")
    s.add_argument("--storage-root")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.config_values = load_config(args.config) if args.config else {}
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"sigmacough {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"sigmacough {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
