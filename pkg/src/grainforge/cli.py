"""Command-line interface: ingest, train, evaluate, explain, report.

Option precedence is CLI flag, then JSON config file (``--config``), then
built-in defaults; the environment variable ``GRAINFORGE_SEED`` acts as a
seed fallback below all three.  Every command prints the paths of the
files it wrote, one per line, and exits 0 on success, 1 on runtime
failure, 2 on usage or validation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import explain as explain_mod
from . import imaging, metrics, network, training
from .rng import Rng

SEED_ENV_VAR = "GRAINFORGE_SEED"
IMAGE_EXTENSIONS = (".ppm", ".pgm")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "rice"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    patience: int = 10
    seed: int = 0
    l2: float = 1e-4
    canny: bool = False
    segment: bool = False
    augment: bool = False
    canny_sigma: float = 1.0
    canny_low: float = 50.0
    canny_high: float = 100.0
    dtype: str = "f32"
    split: str = "test"
    method: str = "lime"
    target_class: int | None = None
    segments: int | None = None
    compactness: float = 10.0
    slic_iters: int = 10
    samples: int = 1000
    kernel_width: float = 0.25
    ridge: float = 1.0
    top_k: int = 5
    baseline: str = "mean"

    def validate(self) -> None:
        if self.model not in ("rice", "disease"):
            raise UsageError(f"unknown model {self.model!r}")
        if self.optimizer not in ("sgd", "adam", "adamax"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise UsageError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise UsageError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise UsageError(f"patience must be >= 1, got {self.patience}")
        if self.seed < 0 or self.seed >= 2**64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.l2 < 0:
            raise UsageError(f"l2 must be >= 0, got {self.l2}")
        if not 0 <= self.canny_low < self.canny_high:
            raise UsageError(
                f"canny thresholds need 0 <= low < high, got {self.canny_low}, {self.canny_high}"
            )
        if self.dtype not in ("f32", "f64"):
            raise UsageError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if self.split not in training.SPLIT_TAGS:
            raise UsageError(f"split must be one of {training.SPLIT_TAGS}")
        if self.method not in ("lime", "shap"):
            raise UsageError(f"method must be lime or shap, got {self.method!r}")
        if self.samples < 1:
            raise UsageError(f"samples must be >= 1, got {self.samples}")
        if self.baseline not in ("mean", "gray"):
            raise UsageError(f"baseline must be mean or gray, got {self.baseline!r}")

    def numpy_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def train_config(self, data_root) -> training.TrainConfig:
        return training.TrainConfig(
            data_root=data_root,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            lam=self.l2,
            use_canny=self.canny,
            use_segment=self.segment,
            use_augment=self.augment,
            canny_sigma=self.canny_sigma,
            canny_low=self.canny_low,
            canny_high=self.canny_high,
            dtype=self.numpy_dtype(),
        )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge CLI flags over a JSON config file over defaults."""
    file_cfg = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")

    known = {f.name for f in fields(RunConfig)}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")

    cfg = RunConfig()
    for f in fields(RunConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            setattr(cfg, f.name, cli_value)
        elif f.name in file_cfg:
            setattr(cfg, f.name, file_cfg[f.name])
        elif f.name == "seed" and os.environ.get(SEED_ENV_VAR):
            try:
                cfg.seed = int(os.environ[SEED_ENV_VAR])
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV_VAR} must be an integer") from exc
    cfg.validate()
    return cfg


def _emit(path) -> None:
    print(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    root = Path(args.directory)
    if not root.is_dir():
        raise UsageError(f"dataset directory {root} does not exist")
    records = []
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    populated = 0
    for class_dir in class_dirs:
        files = sorted(
            p.name for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            print(f"warning: class directory {class_dir.name!r} has no images", file=sys.stderr)
            continue
        populated += 1
        for name in files:
            records.append(
                training.ManifestRecord(path=f"{class_dir.name}/{name}", label=class_dir.name)
            )
    if populated == 0:
        raise UsageError(f"no class directories with images under {root}")
    manifest = training.manifest_from_records(records)
    training.write_manifest(manifest, args.out)
    _emit(args.out)
    return 0


def _build_spec(model: str) -> network.NetworkSpec:
    return network.build_rice_cnn() if model == "rice" else network.build_disease_cnn()


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    manifest = training.read_manifest(args.manifest)
    spec = _build_spec(cfg.model)
    assignment = training.split(manifest, cfg.seed)
    params, history = training.train(
        spec, manifest, assignment, cfg.train_config(args.data_root)
    )
    network.save_weights(spec, params.astype(np.float32), args.out)
    training.write_history(history, args.history)
    _emit(args.out)
    _emit(args.history)
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    spec, params = network.load_weights(args.weights)
    manifest = training.read_manifest(args.manifest)
    assignment = training.split(manifest, cfg.seed)
    indices = assignment.indices(cfg.split)
    result = training.evaluate(
        spec, params, manifest, indices, cfg.train_config(args.data_root)
    )
    curve = metrics.roc_micro(result.probabilities, result.labels)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    confusion_path = out_dir / "confusion.csv"
    roc_path = out_dir / "roc_points.csv"
    metrics.write_metrics_csv(metrics_path, manifest.classes, result.scores)
    metrics.write_confusion_csv(confusion_path, manifest.classes, result.confusion)
    metrics.write_roc_csv(roc_path, curve)
    for path in (metrics_path, confusion_path, roc_path):
        _emit(path)
    return 0


def _model_closure(spec, params, dtype):
    def model(image: imaging.Image) -> np.ndarray:
        h, w, c = spec.input_shape
        resized = imaging.resize(image, w, h)
        if resized.channels != c:
            if c == 1:
                resized = imaging.to_grayscale(resized)
            else:
                resized = imaging.Image.from_array(np.repeat(resized.pixels, 3, axis=2))
        x = imaging.normalize(resized).astype(dtype)
        probs, _ = network.forward(spec, params, x)
        return np.asarray(probs, dtype=np.float64)

    return model


def cmd_explain(args) -> int:
    cfg = resolve_config(args)
    spec, params = network.load_weights(args.weights)
    image_path = Path(args.image)
    image = imaging.read_image(image_path)
    model = _model_closure(spec, params, cfg.numpy_dtype())

    target = cfg.target_class
    if target is None:
        target = int(np.argmax(model(image)))
    if not 0 <= target < spec.num_classes:
        raise UsageError(
            f"class {target} out of range for {spec.num_classes}-class model"
        )

    segments = cfg.segments
    if segments is None:
        segments = 40 if max(spec.input_shape[:2]) <= 64 else 100
    superpixels = explain_mod.slic_superpixels(
        image, segments, compactness=cfg.compactness, iters=cfg.slic_iters
    )
    baseline = explain_mod.mean_baseline(image) if cfg.baseline == "mean" else (128,) * image.channels
    rng = Rng(cfg.seed)

    out_dir = Path(args.out_dir) if args.out_dir else image_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.name
    for ext in IMAGE_EXTENSIONS:
        if stem.lower().endswith(ext):
            stem = stem[: -len(ext)]
            break

    if cfg.method == "lime":
        n_samples = max(cfg.samples, superpixels.count + 2)
        attribution, highlight = explain_mod.lime_explain(
            model,
            image,
            superpixels,
            target,
            n_samples=n_samples,
            kernel_width=cfg.kernel_width,
            ridge=cfg.ridge,
            top_k=cfg.top_k,
            rng=rng,
            baseline=baseline,
        )
        heatmap = explain_mod.render_lime_heatmap(image, superpixels, highlight)
        heatmap_path = out_dir / f"{stem}.lime.ppm"
        csv_path = out_dir / f"{stem}.lime.csv"
    else:
        attribution = explain_mod.kernel_shap(
            model,
            image,
            superpixels,
            target,
            baseline=baseline,
            n_samples=cfg.samples,
            rng=rng,
        )
        heatmap = explain_mod.render_shap_heatmap(image, superpixels, attribution)
        heatmap_path = out_dir / f"{stem}.shap.ppm"
        csv_path = out_dir / f"{stem}.shap.csv"

    explain_mod.write_attribution_csv(csv_path, attribution)
    imaging.write_image(heatmap, heatmap_path)
    _emit(csv_path)
    _emit(heatmap_path)
    return 0


def cmd_report(args) -> int:
    lines = []
    history = training.read_history(args.history)
    lines.append(f"Training history: {args.history}")
    lines.append("epoch  train_loss  train_acc  val_loss  val_acc")
    for i, rec in enumerate(history.epochs, start=1):
        marker = "  <- best" if i - 1 == history.best_epoch else ""
        lines.append(
            f"{i:5d}  {rec.train_loss:10.6f}  {rec.train_acc:9.6f}  "
            f"{rec.val_loss:8.6f}  {rec.val_acc:7.6f}{marker}"
        )
    lines.append(
        f"best epoch: {history.best_epoch + 1} "
        f"(val loss {history.epochs[history.best_epoch].val_loss:.6f})"
    )
    if args.metrics:
        lines.append("")
        lines.append(f"Metrics: {args.metrics}")
        with open(args.metrics) as fh:
            lines.extend(line.rstrip("\n") for line in fh)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        _emit(args.out)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grainforge",
        description="Crop-image CNN training and explanation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="scan class directories into a manifest CSV")
    p_ingest.add_argument("directory", help="dataset root with one subdirectory per class")
    p_ingest.add_argument("--out", default="manifest.csv", help="manifest path to write")
    p_ingest.set_defaults(func=cmd_ingest)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int)

    p_train = sub.add_parser("train", help="train a model from a manifest")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--data-root", required=True)
    p_train.add_argument("--out", default="weights.gfw", help="weights file to write")
    p_train.add_argument("--history", default="history.csv", help="history CSV to write")
    p_train.add_argument("--model", choices=["rice", "disease"])
    p_train.add_argument("--optimizer", choices=["sgd", "adam", "adamax"])
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--patience", type=int)
    p_train.add_argument("--l2", type=float, help="L2 regularization coefficient")
    p_train.add_argument("--canny", action="store_const", const=True, default=None,
                         help="replace inputs with Canny edge maps")
    p_train.add_argument("--segment", action="store_const", const=True, default=None,
                         help="zero background via Otsu segmentation")
    p_train.add_argument("--augment", action="store_const", const=True, default=None,
                         help="expand training data with rotations and flips")
    p_train.add_argument("--canny-sigma", dest="canny_sigma", type=float)
    p_train.add_argument("--canny-low", dest="canny_low", type=float)
    p_train.add_argument("--canny-high", dest="canny_high", type=float)
    p_train.add_argument("--dtype", choices=["f32", "f64"])
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score saved weights on a manifest split")
    p_eval.add_argument("--weights", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--data-root", required=True)
    p_eval.add_argument("--split", choices=list(training.SPLIT_TAGS))
    p_eval.add_argument("--out-dir", default=".")
    p_eval.add_argument("--batch-size", dest="batch_size", type=int)
    p_eval.add_argument("--canny", action="store_const", const=True, default=None,
                        help="must match the preprocessing used at training time")
    p_eval.add_argument("--segment", action="store_const", const=True, default=None,
                        help="must match the preprocessing used at training time")
    p_eval.add_argument("--canny-sigma", dest="canny_sigma", type=float)
    p_eval.add_argument("--canny-low", dest="canny_low", type=float)
    p_eval.add_argument("--canny-high", dest="canny_high", type=float)
    p_eval.add_argument("--dtype", choices=["f32", "f64"])
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_explain = sub.add_parser("explain", help="attribute one prediction to superpixels")
    p_explain.add_argument("--weights", required=True)
    p_explain.add_argument("--image", required=True)
    p_explain.add_argument("--method", choices=["lime", "shap"])
    p_explain.add_argument("--class", dest="target_class", type=int,
                           help="class to explain (default: the argmax class)")
    p_explain.add_argument("--segments", type=int, help="target superpixel count")
    p_explain.add_argument("--compactness", type=float)
    p_explain.add_argument("--slic-iters", dest="slic_iters", type=int)
    p_explain.add_argument("--samples", type=int, help="perturbation sample budget")
    p_explain.add_argument("--kernel-width", dest="kernel_width", type=float)
    p_explain.add_argument("--ridge", type=float)
    p_explain.add_argument("--top-k", dest="top_k", type=int)
    p_explain.add_argument("--baseline", choices=["mean", "gray"])
    p_explain.add_argument("--out-dir", default=None,
                           help="output directory (default: next to the image)")
    p_explain.add_argument("--dtype", choices=["f32", "f64"])
    add_common(p_explain)
    p_explain.set_defaults(func=cmd_explain)

    p_report = sub.add_parser("report", help="summarize history and metrics as text")
    p_report.add_argument("--history", required=True)
    p_report.add_argument("--metrics", help="metrics.csv to append")
    p_report.add_argument("--out", help="write the report here instead of stdout")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
