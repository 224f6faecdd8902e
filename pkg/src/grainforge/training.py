"""Dataset manifests, stratified splitting, the training loop, evaluation.

Manifests are CSV files (`path,label`) with paths relative to a dataset
root.  Splitting is stratified per class with largest-remainder rounding,
so the 80/10/10 ratios hold within one record for every class.  The epoch
loop shuffles with seeded streams, keeps the parameters from the epoch
with minimum validation loss, and records per-epoch curves; identical
(seed, config, dataset) triples reproduce histories and weights exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .imaging import Image
from .metrics import ClassScore, ConfusionMatrix, class_report, confusion_from_pairs
from .network import (
    NetworkSpec,
    Parameters,
    backward,
    forward,
    init_parameters,
    l2_penalty,
    loss as loss_fn,
)
from .optimizer import OptimizerState, step
from .rng import Rng

SPLIT_TAGS = ("train", "val", "test")
DEFAULT_RATIOS = (0.8, 0.1, 0.1)
MIN_CLASS_SIZE = 10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: str


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]
    classes: tuple[str, ...]  # sorted lexicographically


def manifest_from_records(records) -> Manifest:
    records = tuple(records)
    seen = set()
    for rec in records:
        if rec.path in seen:
            raise ValueError(f"duplicate manifest path {rec.path!r}")
        seen.add(rec.path)
    classes = tuple(sorted({rec.label for rec in records}))
    return Manifest(records=records, classes=classes)


def read_manifest(path) -> Manifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label"]:
            raise ValueError(f"manifest must start with 'path,label', got {header}")
        records = [ManifestRecord(path=row[0], label=row[1]) for row in reader if row]
    return manifest_from_records(records)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for rec in manifest.records:
            writer.writerow([rec.path, rec.label])


@dataclass(frozen=True)
class SplitAssignment:
    tags: tuple[str, ...]  # per-record, aligned with manifest.records
    seed: int

    def indices(self, tag: str) -> list[int]:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        return [i for i, t in enumerate(self.tags) if t == tag]


def _largest_remainder_counts(n: int, ratios) -> list[int]:
    ideals = [n * r for r in ratios]
    base = [math.floor(v) for v in ideals]
    leftover = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(ideals[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split(manifest: Manifest, seed: int, ratios=DEFAULT_RATIOS) -> SplitAssignment:
    """Stratified train/val/test assignment with largest-remainder rounding."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    rng = Rng(seed).child("split")
    tags = [""] * len(manifest.records)
    for label in manifest.classes:
        members = [i for i, rec in enumerate(manifest.records) if rec.label == label]
        if len(members) < MIN_CLASS_SIZE:
            raise ValueError(
                f"class {label!r} has only {len(members)} records; "
                f"at least {MIN_CLASS_SIZE} required"
            )
        perm = rng.child(f"class-{label}").permutation(len(members))
        shuffled = [members[j] for j in perm]
        counts = _largest_remainder_counts(len(members), ratios)
        cursor = 0
        for tag, count in zip(SPLIT_TAGS, counts):
            for idx in shuffled[cursor : cursor + count]:
                tags[idx] = tag
            cursor += count
    return SplitAssignment(tags=tuple(tags), seed=seed)


# ---------------------------------------------------------------------------
# Example loading
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    data_root: Path | str = "."
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    patience: int = 10
    seed: int = 0
    lam: float = 1e-4
    use_canny: bool = False
    use_segment: bool = False
    use_augment: bool = False
    canny_sigma: float = 1.0
    canny_low: float = 50.0
    canny_high: float = 100.0
    dtype: type = np.float32

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.lam < 0:
            raise ValueError(f"L2 coefficient must be >= 0, got {self.lam}")


def _match_channels(image: Image, channels: int) -> Image:
    if image.channels == channels:
        return image
    if channels == 1:
        return imaging.to_grayscale(image)
    return Image.from_array(np.repeat(image.pixels, 3, axis=2))


def load_example_image(path, spec: NetworkSpec, config: TrainConfig) -> Image:
    """Read and run the flag-selected preprocessing stages up to resize."""
    try:
        image = imaging.read_image(path)
    except (OSError, ValueError) as exc:
        raise TrainingError(f"failed to read image {path}: {exc}") from exc
    if config.use_canny:
        edges = imaging.canny(
            image, config.canny_sigma, config.canny_low, config.canny_high
        )
        image = imaging.edge_map_to_image(edges)
    if config.use_segment:
        mask = imaging.segment_grain(image)
        image = imaging.apply_segment_mask(image, mask)
    h, w, c = spec.input_shape
    image = imaging.resize(image, w, h)
    return _match_channels(image, c)


def _to_array(image: Image, dtype) -> np.ndarray:
    return imaging.normalize(image).astype(dtype)


def load_dataset(
    manifest: Manifest,
    indices,
    spec: NetworkSpec,
    config: TrainConfig,
    augment: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack the selected records into (examples, label indices) arrays."""
    root = Path(config.data_root)
    class_index = {label: k for k, label in enumerate(manifest.classes)}
    xs, ys = [], []
    for i in indices:
        rec = manifest.records[i]
        image = load_example_image(root / rec.path, spec, config)
        variants = imaging.augment(image) if augment else [image]
        for variant in variants:
            xs.append(_to_array(variant, config.dtype))
            ys.append(class_index[rec.label])
    return np.stack(xs), np.array(ys, dtype=np.int64)


def onehot(labels: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0  # index into epochs, minimum validation loss


def write_history(history: TrainingHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for i, rec in enumerate(history.epochs, start=1):
            writer.writerow(
                [
                    i,
                    f"{rec.train_loss:.6f}",
                    f"{rec.train_acc:.6f}",
                    f"{rec.val_loss:.6f}",
                    f"{rec.val_acc:.6f}",
                ]
            )


def read_history(path) -> TrainingHistory:
    history = TrainingHistory()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            history.epochs.append(
                EpochRecord(
                    train_loss=float(row["train_loss"]),
                    train_acc=float(row["train_acc"]),
                    val_loss=float(row["val_loss"]),
                    val_acc=float(row["val_acc"]),
                )
            )
    if history.epochs:
        history.best_epoch = min(
            range(len(history.epochs)), key=lambda i: history.epochs[i].val_loss
        )
    return history


@dataclass
class EvalResult:
    confusion: ConfusionMatrix
    scores: list[ClassScore]
    loss: float
    probabilities: np.ndarray
    labels: np.ndarray


def evaluate_arrays(
    spec: NetworkSpec,
    params: Parameters,
    xs: np.ndarray,
    labels: np.ndarray,
    lam: float = 0.0,
    batch_size: int = 32,
) -> EvalResult:
    """Run the model over stacked examples and score the predictions.

    Predictions take the argmax probability; ties resolve to the lowest
    class index.
    """
    if len(xs) == 0:
        raise TrainingError("evaluation subset is empty")
    k = spec.num_classes
    probs = np.zeros((len(xs), k), dtype=np.float64)
    total_ce = 0.0
    for start in range(0, len(xs), batch_size):
        batch = xs[start : start + batch_size]
        batch_labels = labels[start : start + batch_size]
        p, _ = forward(spec, params, batch)
        probs[start : start + len(batch)] = p
        y = onehot(batch_labels, k, p.dtype)
        total_ce += loss_fn(p, y, params, 0.0) * len(batch)
    mean_loss = total_ce / len(xs) + l2_penalty(params, lam)
    predictions = probs.argmax(axis=1)
    cm = confusion_from_pairs(labels, predictions, k)
    return EvalResult(
        confusion=cm,
        scores=class_report(cm),
        loss=float(mean_loss),
        probabilities=probs,
        labels=np.asarray(labels),
    )


def evaluate(
    spec: NetworkSpec,
    params: Parameters,
    manifest: Manifest,
    indices,
    config: TrainConfig,
    lam: float = 0.0,
) -> EvalResult:
    xs, labels = load_dataset(manifest, indices, spec, config)
    return evaluate_arrays(spec, params, xs, labels, lam=lam, batch_size=config.batch_size)


def train_arrays(
    spec: NetworkSpec,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    config: TrainConfig,
) -> tuple[Parameters, TrainingHistory]:
    """Core epoch loop over preloaded arrays."""
    config.validate()
    if len(train_x) == 0 or len(val_x) == 0:
        raise TrainingError("train and validation splits must be non-empty")
    k = spec.num_classes
    base_rng = Rng(config.seed)
    params = init_parameters(spec, base_rng.child("init"), dtype=config.dtype)
    state = OptimizerState(
        algorithm=config.optimizer, learning_rate=config.learning_rate
    )

    history = TrainingHistory()
    best_loss = math.inf
    best_params = params.copy()
    stale_epochs = 0

    for epoch in range(config.epochs):
        perm = base_rng.child(f"shuffle-epoch-{epoch}").permutation(len(train_x))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(perm), config.batch_size):
            take = perm[start : start + config.batch_size]
            batch = train_x[take]
            batch_labels = train_y[take]
            y = onehot(batch_labels, k, batch.dtype)
            probs, cache = forward(spec, params, batch)
            loss_sum += loss_fn(probs, y, params, config.lam) * len(take)
            correct += int((probs.argmax(axis=1) == batch_labels).sum())
            grads = backward(spec, params, cache, y, config.lam)
            params, state = step(state, params, grads)

        val = evaluate_arrays(
            spec, params, val_x, val_y, lam=config.lam, batch_size=config.batch_size
        )
        record = EpochRecord(
            train_loss=loss_sum / len(train_x),
            train_acc=correct / len(train_x),
            val_loss=val.loss,
            val_acc=float(np.trace(val.confusion.counts)) / val.confusion.total,
        )
        history.epochs.append(record)

        if record.val_loss < best_loss:
            best_loss = record.val_loss
            history.best_epoch = epoch
            best_params = params.copy()
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.patience:
                break
    return best_params, history


def train(
    spec: NetworkSpec,
    manifest: Manifest,
    assignment: SplitAssignment,
    config: TrainConfig,
) -> tuple[Parameters, TrainingHistory]:
    """Load the split's examples from disk and run the epoch loop."""
    if len(manifest.classes) != spec.num_classes:
        raise TrainingError(
            f"manifest has {len(manifest.classes)} classes but the network "
            f"expects {spec.num_classes}"
        )
    train_x, train_y = load_dataset(
        manifest, assignment.indices("train"), spec, config, augment=config.use_augment
    )
    val_x, val_y = load_dataset(manifest, assignment.indices("val"), spec, config)
    return train_arrays(spec, train_x, train_y, val_x, val_y, config)
