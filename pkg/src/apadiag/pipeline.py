"""Experiments: training runs, confusion matrices, SNR sweeps, re-split statistics, multi-element faults."""

import csv
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import arraysim
from .dataset import Corpus, batch_order, build_corpus, features_to_complex, simulate_pool, split_corpus, split_indices
from .errors import ConfigError, DomainError, LabelError, TrainingError
from .nn import ArchSpec, Network, OptimizerConfig, init_params, save_checkpoint, sgd_step, softmax_xent

CLEAN = float("inf")


# -- confusion matrix ---------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Counts of (true class, predicted class); rows are true classes."""

    counts: np.ndarray
    class_names: list

    @classmethod
    def from_predictions(cls, labels, predictions, class_names):
        n = len(class_names)
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        for name, v in (("label", labels), ("prediction", predictions)):
            if v.size and (v.min() < 0 or v.max() >= n):
                raise LabelError(f"{name} outside [0, {n})")
        counts = np.bincount(labels * n + predictions, minlength=n * n).reshape(n, n)
        return cls(counts, list(class_names))

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def support(self):
        return self.counts.sum(axis=1)

    @property
    def accuracy(self):
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def normalized(self):
        """Row-normalized matrix and a mask of rows with no samples (left as zeros)."""
        support = self.support
        empty = support == 0
        out = np.zeros(self.counts.shape)
        out[~empty] = self.counts[~empty] / support[~empty, None]
        return out, empty

    def per_class_accuracy(self):
        """Diagonal of the normalized matrix; NaN for classes without samples."""
        support = self.support
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, np.diag(self.counts) / np.maximum(support, 1), np.nan)

    def collapse_indicator(self):
        """Fraction of all predictions that land on the most predicted class."""
        return float(self.counts.sum(axis=0).max() / self.total) if self.total else float("nan")

    def modal_class(self):
        return int(np.argmax(self.counts.sum(axis=0)))

    def write_grid_csv(self, path, normalized=True):
        """Plot-ready grid: header row of predicted names, one row per true class."""
        grid = self.normalized()[0] if normalized else self.counts
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted", *self.class_names])
            for name, row in zip(self.class_names, grid):
                w.writerow([name, *(f"{v:.6f}" if normalized else int(v) for v in row)])

    def to_dict(self):
        return {"class_names": self.class_names, "counts": self.counts.tolist(), "accuracy": self.accuracy}


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    """Optimizer settings plus the data handling around it.

    `stratified` interleaves classes inside each epoch so every batch has the
    same class mix; `standardize` fits a per-feature input standardization on
    the training data; `recalibrate` resets batch-norm running statistics to
    population statistics (over at most `recalibrate_samples` training rows)
    after every epoch. `val_fraction` of the training split drives the
    plateau rule.
    """

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 200
    val_fraction: float = 0.1
    stratified: bool = True
    standardize: bool = True
    recalibrate: bool = True
    recalibrate_samples: int = 20000

    def validate(self):
        self.optimizer.validate()
        if self.batch_size < 2:
            raise ConfigError("batch_size", "batch norm needs at least 2 samples per batch")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction", "must lie in [0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["optimizer"] = OptimizerConfig(**d.get("optimizer", {}))
        return cls(**d)


@dataclass
class RunReport:
    """Per-epoch curves and final scores of one training run."""

    loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    test_accuracy: float | None = None
    per_class_accuracy: list | None = None
    inference_s_per_sample: float | None = None
    n_trainable: int = 0
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def epochs(self):
        return len(self.loss)

    def to_dict(self, timing=False):
        d = asdict(self)
        d["epochs"] = self.epochs
        if not timing:
            d.pop("inference_s_per_sample")
        return d


def fit_standardization(X, chunk=4096):
    """Per-feature mean and standard deviation (zero spread mapped to 1), accumulated in float64."""
    n = X.shape[0]
    s = np.zeros(X.shape[1])
    ss = np.zeros(X.shape[1])
    for i in range(0, n, chunk):
        b = X[i:i + chunk].astype(np.float64)
        s += b.sum(axis=0)
        ss += (b * b).sum(axis=0)
    mean = s / n
    std = np.sqrt(np.maximum(ss / n - mean**2, 0.0))
    std[std == 0] = 1.0
    return mean, std


def _stratified_subset(labels, limit, rng):
    if labels.size <= limit:
        return np.arange(labels.size)
    return np.sort(rng.choice(labels.size, size=limit, replace=False))


def train(corpus, spec, config=None, test=None, checkpoint_path=None, log=None):
    """Train a fresh model on `corpus`; returns ``(params, RunReport)``.

    The model is left in eval mode. `test`, if given, is evaluated at the end;
    `log` receives one line per epoch.
    """
    config = (config or TrainConfig()).validate()
    opt = config.optimizer
    spec.validate()
    if len(corpus) == 0:
        raise DomainError("cannot train on an empty corpus")
    if spec.n_classes != corpus.n_classes:
        raise ConfigError("n_classes", f"model has {spec.n_classes} classes, corpus has {corpus.n_classes}")
    if spec.input_dim != corpus.feature_len:
        raise ConfigError("input_dim", f"model expects {spec.input_dim} features, corpus has {corpus.feature_len}")

    if config.val_fraction > 0:
        fit_idx, val_idx = split_indices(corpus.labels, 1 - config.val_fraction, [opt.seed, 1])
        fit, val = corpus.subset(fit_idx), corpus.subset(val_idx)
    else:
        fit, val = corpus, None
    params = init_params(spec, opt.seed)
    if config.standardize:
        params.set_standardization(*fit_standardization(fit.features))
    net = Network(params)
    recal_idx = _stratified_subset(fit.labels, config.recalibrate_samples, np.random.default_rng([opt.seed, 3]))
    monitor = val if val is not None and len(val) else fit.subset(recal_idx)

    report = RunReport(
        n_trainable=params.n_trainable(),
        seeds={"model": opt.seed},
        config={"arch": spec.to_dict(), "train": config.to_dict()},
    )
    lr = opt.learning_rate
    for epoch in range(opt.max_epochs):
        params.train()
        order = batch_order(fit.labels, [opt.seed, 2, epoch], config.stratified)
        total_loss = 0.0
        correct = 0
        seen = 0
        for s in range(0, order.size, config.batch_size):
            idx = order[s:s + config.batch_size]
            if idx.size < 2:
                continue  # a lone trailing sample has no batch statistics
            X, y = fit.features[idx], fit.labels[idx]
            logits = net.forward(X, train=True)
            loss, dlogits = softmax_xent(logits, y)
            if not math.isfinite(loss):
                raise TrainingError(epoch + 1, f"loss became {loss} at learning rate {lr:g}")
            sgd_step(params.trainable(), net.backward(dlogits), lr)
            total_loss += loss * idx.size
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += idx.size
        if config.recalibrate:
            net.recalibrate(fit.features[recal_idx])
        params.eval()
        val_acc = float(np.mean(net.predict(monitor.features) == monitor.labels))
        report.loss.append(total_loss / seen)
        report.train_accuracy.append(correct / seen)
        report.val_accuracy.append(val_acc)
        report.learning_rate.append(lr)
        if log:
            log(f"epoch {epoch + 1}: loss {total_loss / seen:.4f} train {correct / seen:.4f} "
                f"val {val_acc:.4f} lr {lr:.3g}")
        new_lr = opt.next_lr(report.val_accuracy, lr)
        stale = len(report.val_accuracy) - 1 - int(np.argmax(report.val_accuracy))
        if lr <= opt.min_lr and stale and stale % opt.plateau_patience == 0:
            break
        lr = new_lr

    params.eval()
    params.metadata = {
        "epochs": report.epochs,
        "final_lr": report.learning_rate[-1],
        "seeds": report.seeds,
        "class_names": list(corpus.class_names),
    }
    if test is not None:
        cm = evaluate(params, test)
        report.test_accuracy = cm.accuracy
        report.per_class_accuracy = _nan_to_none(cm.per_class_accuracy())
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params)
    return params, report


def evaluate(params, corpus, batch_size=2048):
    """Confusion matrix of eval-mode argmax predictions on `corpus`."""
    if corpus.labels.size and corpus.labels.max() >= params.spec.n_classes:
        raise LabelError(f"label {corpus.labels.max()} outside the model's {params.spec.n_classes} classes")
    pred = Network(params).predict(corpus.features, batch_size)
    return ConfusionMatrix.from_predictions(corpus.labels, pred, corpus.class_names)


# -- SNR sweep ----------------------------------------------------------------

def add_feature_noise(features, snr_db, rng):
    """AWGN at `snr_db` per feature row, added to the complex samples behind the I/Q layout."""
    if snr_db is None or snr_db == CLEAN:
        return np.array(features, copy=True)
    z = features_to_complex(np.asarray(features, dtype=np.float64))
    noisy = arraysim.awgn(z, snr_db, rng, axis=1)
    return np.concatenate([noisy.real, noisy.imag], axis=1).astype(np.asarray(features).dtype)


@dataclass
class SweepReport:
    """Accuracy versus SNR; the first point is the clean baseline (SNR = inf)."""

    snr_db: list
    matrices: list

    @property
    def accuracies(self):
        return [m.accuracy for m in self.matrices]

    @property
    def collapse(self):
        return [m.collapse_indicator() for m in self.matrices]

    def at(self, snr):
        return self.matrices[self.snr_db.index(snr)]

    def rows(self):
        """One row per SNR point, clean first."""
        return [
            {
                "snr_db": "clean" if s == CLEAN else s,
                "accuracy": round(m.accuracy, 6),
                "collapse": round(m.collapse_indicator(), 6),
                "modal_class": m.class_names[m.modal_class()],
            }
            for s, m in zip(self.snr_db, self.matrices)
        ]

    def to_dict(self):
        return {
            "points": self.rows(),
            "per_class_accuracy": {
                ("clean" if s == CLEAN else str(s)): _nan_to_none(m.per_class_accuracy())
                for s, m in zip(self.snr_db, self.matrices)
            },
            "class_names": self.matrices[0].class_names,
        }


def _check_grid(grid):
    grid = list(grid)
    if not grid:
        raise DomainError("SNR grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("SNR grid must be strictly increasing")
    return grid


def snr_sweep(params, test, grid=None, seed=0, batch_size=2048):
    """Evaluate on clean `test` features and on noisy copies at every grid SNR."""
    grid = _check_grid(arraysim.snr_grid() if grid is None else grid)
    matrices = [evaluate(params, test, batch_size)]
    for i, snr in enumerate(grid):
        rng = np.random.default_rng([seed, i])
        noisy = Corpus(add_feature_noise(test.features, snr, rng), test.labels, test.class_names)
        matrices.append(evaluate(params, noisy, batch_size))
    return SweepReport([CLEAN, *grid], matrices)


# -- repeated re-splits -------------------------------------------------------

def five_number(values, axis=0):
    """(min, q1, median, q3, max) along `axis`, ignoring NaN."""
    v = np.asarray(values, dtype=float)
    with warnings.catch_warnings():
        # all-NaN slices (classes absent from every run) stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.stack([
            np.nanmin(v, axis=axis),
            np.nanpercentile(v, 25, axis=axis),
            np.nanmedian(v, axis=axis),
            np.nanpercentile(v, 75, axis=axis),
            np.nanmax(v, axis=axis),
        ])


@dataclass
class StatReport:
    """Per-class accuracy over repeated 70/30 re-splits.

    `accuracy` has shape (runs, snr points, classes); the first SNR point
    is clean. `summary` holds five-number summaries with shape
    (5, snr points, classes).
    """

    snr_db: list
    class_names: list
    split_seeds: list
    accuracy: np.ndarray
    overall: np.ndarray

    @property
    def n_runs(self):
        return self.accuracy.shape[0]

    @property
    def summary(self):
        return five_number(self.accuracy, axis=0)

    def rows(self):
        """One row per (class, SNR, run)."""
        out = []
        for c, name in enumerate(self.class_names):
            for k, snr in enumerate(self.snr_db):
                for r in range(self.n_runs):
                    a = self.accuracy[r, k, c]
                    out.append({
                        "class": name,
                        "snr_db": "clean" if snr == CLEAN else snr,
                        "run": r,
                        "accuracy": "" if np.isnan(a) else round(float(a), 6),
                    })
        return out

    def to_dict(self):
        s = self.summary
        summaries = {}
        for k, snr in enumerate(self.snr_db):
            key = "clean" if snr == CLEAN else str(snr)
            summaries[key] = {
                name: dict(zip(("min", "q1", "median", "q3", "max"), _nan_to_none(s[:, k, c])))
                for c, name in enumerate(self.class_names)
            }
        return {
            "n_runs": self.n_runs,
            "split_seeds": self.split_seeds,
            "snr_db": ["clean" if x == CLEAN else x for x in self.snr_db],
            "overall_accuracy": _nan_to_none(self.overall),
            "summaries": summaries,
        }


def stat_runs(manifest, spec, config=None, n_runs=10, grid=None, split_seeds=None, threads=1,
              pool=None, sweep_seed=0, log=None):
    """Retrain and sweep on `n_runs` fresh 70/30 re-splits of one simulated pool.

    The pool and the model seed stay fixed; only the split changes. Split
    seeds default to values derived from ``manifest.split_seed``.
    """
    if n_runs < 2:
        raise ConfigError("runs", "need at least 2 runs")
    grid = _check_grid(arraysim.snr_grid() if grid is None else grid)
    if split_seeds is None:
        split_seeds = [
            int(np.random.SeedSequence([manifest.split_seed, r]).generate_state(1, np.uint32)[0])
            for r in range(n_runs)
        ]
    if len(split_seeds) != n_runs:
        raise ConfigError("split_seeds", f"expected {n_runs} seeds")
    if pool is None:
        pool, _ = simulate_pool(manifest, threads=threads)

    def one_run(r):
        train_set, test_set = split_corpus(pool, manifest.split_fraction, split_seeds[r], manifest.split_mode)
        params, _ = train(train_set, spec, config)
        sweep = snr_sweep(params, test_set, grid, seed=sweep_seed)
        if log:
            log(f"run {r + 1}/{n_runs}: clean accuracy {sweep.accuracies[0]:.4f}")
        return [m.per_class_accuracy() for m in sweep.matrices], sweep.accuracies

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one_run, range(n_runs)))
    else:
        results = [one_run(r) for r in range(n_runs)]
    accuracy = np.array([r[0] for r in results])
    overall = np.array([r[1] for r in results])
    return StatReport([CLEAN, *grid], list(pool.class_names), list(split_seeds), accuracy, overall)


# -- multi-element faults -----------------------------------------------------

def multi_element_experiment(manifest, spec, config=None, threads=1, log=None):
    """Train and test on grouped multi-element faults; returns ``(params, RunReport, ConfusionMatrix)``."""
    if manifest.label_scheme().mode != "multigroup":
        raise ConfigError("scheme", "multi-element experiment needs the multigroup scheme")
    train_set, test_set, _ = build_corpus(manifest, threads=threads)
    params, report = train(train_set, spec, config, log=log)
    cm = evaluate(params, test_set)
    report.test_accuracy = cm.accuracy
    report.per_class_accuracy = _nan_to_none(cm.per_class_accuracy())
    return params, report, cm


# -- timing -------------------------------------------------------------------

def time_inference(params, X, repeats=100, warmup=5):
    """Median wall-clock seconds of a single-sample eval-mode forward pass."""
    net = Network(params)
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    rows = [X[i % X.shape[0]][None, :] for i in range(max(repeats, 1) + warmup)]
    for r in rows[:warmup]:
        net.forward(r, train=False)
    times = []
    for r in rows[warmup:]:
        t = time.perf_counter()
        net.forward(r, train=False)
        times.append(time.perf_counter() - t)
    return float(np.median(times))


# -- writers ------------------------------------------------------------------

def _nan_to_none(values):
    a = np.asarray(values, dtype=float)
    if a.ndim > 1:
        return [_nan_to_none(row) for row in a]
    return [float(v) if math.isfinite(v) else None for v in a]


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    return o


def write_json(path, obj):
    """Deterministic JSON: sorted keys, non-finite floats written as null."""
    with open(path, "w") as fh:
        json.dump(_finite(obj), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_csv(path, rows):
    if not rows:
        raise DomainError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
