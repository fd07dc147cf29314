"""Experiment orchestration: config parsing, training, evaluation, CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import losses
from .data import Dataset, SplitDatasets, apply_split, gen_blobs, load_idx, make_split
from .metrics import MetricRow, evaluate_scores
from .model import SGD, Architecture, ModelParams, NonFiniteParams, cosine_lr, forward, init, predict_arrays, save_weights, track
from .rng import Stream, make_rng
from .scores import SCORE_NAMES, calibrate, compute_score
from .tensor import NumericError, backward

log = logging.getLogger(__name__)

CSV_HEADER = ("split_seed", "score_fn", "accuracy", "auroc", "fpr95", "oscr")
METRIC_FIELDS = CSV_HEADER[2:]
LOSS_REGIMES = ("ce", "ls", "als")
OUT_ENV = "OODLAB_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "blobs"
    blobs_classes: int = 10
    blobs_dim: int = 16
    blobs_train_per_class: int = 100
    blobs_test_per_class: int = 100
    blobs_separation: float = 4.0
    blobs_noise: float = 1.0
    data_seed: int = 0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    n_known: int = 6
    split_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    # model and optimisation
    hidden_dims: tuple[int, ...] = (64, 64)
    loss: str = "ce"
    alpha: float = 0.1
    lam: float = 5.0
    strategy: str = "only_corr"
    ramp_epochs: int = 0
    epochs: int = 100
    batch_size: int = 64
    lr0: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    # evaluation
    scores: tuple[str, ...] = SCORE_NAMES
    react_percentile: float = 0.9
    vim_dim: int = -1  # -1: half the feature width
    tpr_target: float = 0.95
    eval_workers: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.dataset not in ("blobs", "idx"):
            problems.append(f"dataset must be 'blobs' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx" and not all(
            (self.idx_train_images, self.idx_train_labels, self.idx_test_images, self.idx_test_labels)
        ):
            problems.append("idx dataset needs idx_train_images/labels and idx_test_images/labels")
        if self.loss not in LOSS_REGIMES:
            problems.append(f"loss must be one of {LOSS_REGIMES}, got {self.loss!r}")
        if not self.split_seeds:
            problems.append("split_seeds must be non-empty")
        if self.epochs < 0 or self.batch_size < 1:
            problems.append("epochs must be >= 0 and batch_size >= 1")
        if not self.lr0 >= self.lr_min >= 0:
            problems.append("need lr0 >= lr_min >= 0")
        for name in self.scores:
            if name not in SCORE_NAMES:
                problems.append(f"unknown score function {name!r}")
        if self.dataset == "blobs" and not 1 <= self.n_known < self.blobs_classes:
            problems.append("need 1 <= n_known < blobs_classes")
        try:
            self.loss_config()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError("; ".join(problems))

    def loss_config(self):
        if self.loss == "ls":
            return losses.LSConfig(self.alpha)
        if self.loss == "als":
            return losses.ALSConfig(self.lam, self.strategy, self.ramp_epochs)
        return None

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def snapshot(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


# config-file keys that differ from field names
_KEY_ALIASES = {"lambda": "lam", "T_e": "ramp_epochs"}


def _convert(raw: str, annotation: str):
    if annotation.startswith("tuple"):
        inner = annotation[annotation.index("[") + 1:annotation.index(",")]
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(_convert(s, inner) for s in items)
    if annotation == "int":
        return int(raw)
    if annotation == "float":
        return float(raw)
    return raw


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma-separated.

    Relative IDX paths are resolved against ``base_dir``.
    """
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(raw, str(types[key]))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    if base_dir is not None:
        for key in ("idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = str(Path(base_dir) / values[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


def output_dir(config: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUT_ENV) or config.output_dir)


def load_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if config.dataset == "blobs":
        return gen_blobs(
            config.blobs_classes, config.blobs_dim, config.blobs_train_per_class,
            config.blobs_separation, config.blobs_noise, config.data_seed,
            n_test_per_class=config.blobs_test_per_class,
        )
    train = load_idx(config.idx_train_images, config.idx_train_labels)
    test = load_idx(config.idx_test_images, config.idx_test_labels)
    k = max(train.class_count, test.class_count)
    train.class_count = test.class_count = k
    return train, test


def split_for_seed(config: ExperimentConfig, seed: int, datasets=None) -> SplitDatasets:
    train, test = datasets if datasets is not None else load_datasets(config)
    return apply_split(train, test, make_split(train.class_count, config.n_known, seed))


# training


@dataclass
class RunRecord:
    config: dict
    split_seed: int
    epoch_loss: list[float] = field(default_factory=list)
    lambda_eff: list[float] = field(default_factory=list)
    train_accuracy: Optional[float] = None
    weights_path: Optional[str] = None
    diverged: bool = False


def batch_loss(config: ExperimentConfig, params: ModelParams, x, y, epoch: int):
    fwd = forward(params, x)
    if config.loss == "ls":
        return losses.ls_loss(fwd.probs, y, config.loss_config())
    if config.loss == "als":
        return losses.als_loss(fwd, y, config.loss_config(), epoch)
    return losses.cross_entropy(fwd.probs, y)


def train(config: ExperimentConfig, split: SplitDatasets) -> tuple[Optional[ModelParams], RunRecord]:
    """Seeded minibatch SGD with a per-epoch cosine learning rate.

    Returns ``(None, record)`` with ``record.diverged`` set if a loss or a
    parameter update turns non-finite.
    """
    seed = split.spec.seed
    data = split.train_known
    arch = Architecture(data.inputs.shape[1], config.hidden_dims, data.class_count)
    params = init(arch, seed)
    record = RunRecord(config.snapshot(), seed)
    opt = SGD(config.momentum, config.weight_decay)
    shuffle = make_rng(seed, Stream.SHUFFLE)
    als_cfg = config.loss_config() if config.loss == "als" else None
    n = len(data)

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)
        record.lambda_eff.append(losses.effective_lambda(als_cfg, epoch) if als_cfg else 0.0)
        order = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            track(params)
            try:
                # overflow here is caught below as divergence
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    loss = batch_loss(config, params, data.inputs[idx], data.labels[idx], epoch)
                    value = loss.item()
                    if np.isfinite(value):
                        backward(loss)
                        params = opt.step(params, lr)
            except (NonFiniteParams, NumericError):
                value = float("nan")
            if not np.isfinite(value):
                log.warning("split %d diverged at epoch %d", seed, epoch)
                record.diverged = True
                record.epoch_loss.append(value)
                return None, record
            total += value * len(idx)
        record.epoch_loss.append(total / n)

    _, _, probs = predict_arrays(params, data.inputs)
    record.train_accuracy = float(np.mean(np.argmax(probs, axis=1) == data.labels)) if n else None
    return params, record


# evaluation


@dataclass
class EvalReport:
    """Metric rows for one split, in the order the score functions were requested."""

    split_seed: Optional[int]
    rows: list[tuple[str, MetricRow]]

    def row(self, name: str) -> MetricRow:
        for key, value in self.rows:
            if key == name:
                return value
        raise KeyError(name)


def _chunks(n: int, parts: int) -> list[slice]:
    bounds = np.linspace(0, n, max(1, min(parts, n)) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _score_set(params, inputs, names, calib, workers: int):
    def run(sl):
        feats, logits, probs = predict_arrays(params, inputs[sl])
        return np.argmax(probs, axis=1), [compute_score(nm, feats, logits, probs, calib) for nm in names]

    slices = _chunks(len(inputs), workers)
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, slices))
    else:
        parts = [run(sl) for sl in slices]
    preds = np.concatenate([p for p, _ in parts])
    scores = [np.concatenate([s[i] for _, s in parts]) for i in range(len(names))]
    return preds, scores


def evaluate(params: ModelParams, split: SplitDatasets, score_fns: Sequence[str],
             react_percentile: float = 0.9, vim_dim: Optional[int] = None,
             tpr_target: float = 0.95, workers: int = 1) -> EvalReport:
    """Score the test partitions with every requested function.

    Calibration only sees ``split.train_known``.
    """
    if len(split.test_known) == 0:
        raise ValueError("test_known partition is empty")
    feats, logits, _ = predict_arrays(params, split.train_known.inputs)
    w, b = params.last_layer
    calib = calibrate(w, b, feats, logits, tuple(score_fns), react_percentile, vim_dim)

    known_preds, known_scores = _score_set(params, split.test_known.inputs, score_fns, calib, workers)
    if len(split.test_unknown):
        _, unknown_scores = _score_set(params, split.test_unknown.inputs, score_fns, calib, workers)
    else:
        unknown_scores = [np.empty(0)] * len(score_fns)
    labels = split.test_known.labels
    rows = [
        (name, evaluate_scores(ks, known_preds, labels, us, tpr_target))
        for name, ks, us in zip(score_fns, known_scores, unknown_scores)
    ]
    return EvalReport(split.spec.seed, rows)


def evaluate_config(params: ModelParams, config: ExperimentConfig, split: SplitDatasets) -> EvalReport:
    return evaluate(
        params, split, config.scores, config.react_percentile,
        None if config.vim_dim < 0 else config.vim_dim, config.tpr_target, config.eval_workers,
    )


# experiment


@dataclass
class AggregateReport:
    config: ExperimentConfig
    reports: list[EvalReport]
    records: list[RunRecord]
    diverged_seeds: list[int]

    @property
    def partial(self) -> bool:
        return bool(self.diverged_seeds)

    def summary(self) -> dict[str, dict[str, tuple[Optional[float], Optional[float]]]]:
        """``{score_fn: {metric: (mean, std)}}`` over non-diverged splits."""
        out: dict = {}
        for name in dict.fromkeys(self.config.scores):
            out[name] = {}
            for metric in METRIC_FIELDS:
                vals = [getattr(r.row(name), metric) for r in self.reports]
                vals = [v for v in vals if v is not None]
                out[name][metric] = (float(np.mean(vals)), float(np.std(vals))) if vals else (None, None)
        return out

    def mean(self, score_fn: str, metric: str) -> Optional[float]:
        return self.summary()[score_fn][metric][0]

    def to_csv(self) -> str:
        return report_csv(self)


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6f}"


def report_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    by_seed = {r.split_seed: r for r in report.reports}
    for seed in report.config.split_seeds:
        if seed in report.diverged_seeds:
            writer.writerow([seed, "DIVERGED", "", "", "", ""])
            continue
        for name, row in by_seed[seed].rows:
            writer.writerow([seed, name] + [_fmt(getattr(row, m)) for m in METRIC_FIELDS])
    summary = report.summary()
    for stat, i in (("mean", 0), ("std", 1)):
        for name in summary:
            writer.writerow([stat, name] + [_fmt(summary[name][m][i]) for m in METRIC_FIELDS])
    return buf.getvalue()


def run_experiment(config: ExperimentConfig, out_dir=None, save=True) -> AggregateReport:
    """Train and evaluate one model per split seed, then aggregate.

    With ``save`` the CSV, per-split weights and run records go to
    ``out_dir`` (default: ``$OODLAB_OUT`` or ``config.output_dir``).
    """
    datasets = load_datasets(config)
    out = Path(out_dir) if out_dir is not None else output_dir(config)
    if save:
        out.mkdir(parents=True, exist_ok=True)
    reports, records, diverged = [], [], []
    for seed in config.split_seeds:
        split = split_for_seed(config, seed, datasets)
        params, record = train(config, split)
        records.append(record)
        if params is None:
            diverged.append(seed)
            continue
        if save:
            path = out / f"weights_seed{seed}.txt"
            save_weights(params, path)
            record.weights_path = path.name
        reports.append(evaluate_config(params, config, split))
        log.info("split %d done: train acc %.4f", seed, record.train_accuracy or float("nan"))

    result = AggregateReport(config, reports, records, diverged)
    if save:
        (out / "results.csv").write_text(result.to_csv())
        runs = [dataclasses.asdict(r) for r in records]
        (out / "runs.json").write_text(json.dumps(runs, indent=1, sort_keys=True, default=list) + "\n")
    return result
