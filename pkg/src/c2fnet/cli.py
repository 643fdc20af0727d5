"""Command-line surface: train, eval, predict, tsne, and report.

Run configuration is a flat key=value text file plus command-line overrides.
Everything a run emits (curves.csv, report.csv, confusion.txt, embedding.csv,
SVG figures, checkpoints) is a deterministic function of (config, seed,
dataset).

Exit codes: 0 ok, 2 config, 3 data, 4 numeric blow-up, 5 checkpoint.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import CheckpointError, from_network, load_checkpoint, rebuild_network, save_checkpoint
from .data import (
    LABEL_NAMES,
    DataError,
    DatasetManifest,
    batches,
    decode_image,
    load_manifest,
)
from .net import Network, build_network
from .ops import NonFiniteError, softmax, softmax_cross_entropy
from .optim import KINDS, TrainHyper, make_optimizer, optimizer_step
from .plot import line_chart, scatter_chart
from .tsne import features_for_tsne, tsne_embed

CURVE_HEADER = "epoch,train_loss,val_loss,val_accuracy_top1"


class ConfigError(Exception):
    """Invalid run configuration; message starts with the offending field."""


class NumericError(Exception):
    """Training hit a non-finite loss."""


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_WD_DEFAULTS = {"sgd": 0.0005, "adam": 0.0, "adamw": 0.01, "rmsprop": 0.0}


@dataclass
class RunConfig:
    data_root: str = ""
    optimizer: str = "adamw"
    lr0: float = 0.001
    momentum: float = 0.97
    weight_decay: float | None = None   # per-optimizer default when unset
    epochs: int = 500
    batch_size: int = 16
    img_size: int = 128
    seed: int = 0
    positive_class: int = 0
    output_dir: str = "runs/exp"

    def resolved_weight_decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return _WD_DEFAULTS[self.optimizer]

    def validate(self) -> None:
        if self.optimizer not in KINDS:
            raise ConfigError(f"optimizer: must be one of {'|'.join(KINDS)}, got {self.optimizer!r}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0: must be > 0, got {self.lr0}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum: must be in [0,1), got {self.momentum}")
        if self.weight_decay is not None and self.weight_decay < 0:
            raise ConfigError(f"weight_decay: must be >= 0, got {self.weight_decay}")
        if self.epochs < 0:
            raise ConfigError(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.img_size < 16 or self.img_size % 16:
            raise ConfigError(f"img_size: must be a multiple of 16, got {self.img_size}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {self.seed}")
        if self.positive_class not in (0, 1):
            raise ConfigError(f"positive_class: must be 0 or 1, got {self.positive_class}")

    def hyper(self) -> TrainHyper:
        return TrainHyper(
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.resolved_weight_decay(),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def as_echo(self) -> dict[str, str]:
        echo = {f.name: str(getattr(self, f.name)) for f in fields(self)}
        echo["weight_decay"] = str(self.resolved_weight_decay())
        return echo


_FIELD_TYPES = {
    "data_root": str,
    "optimizer": str,
    "lr0": float,
    "momentum": float,
    "weight_decay": float,
    "epochs": int,
    "batch_size": int,
    "img_size": int,
    "seed": int,
    "positive_class": int,
    "output_dir": str,
}


def read_config_file(path) -> dict[str, str]:
    """Parse a flat key=value config file (blank lines and # comments allowed)."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config: line {lineno} is not key=value: {raw!r}")
        values[key.strip()] = value.strip()
    return values


def build_config(file_values: dict[str, str] | None = None,
                 overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults -> config file -> explicit overrides, with type coercion."""
    config = RunConfig()
    for source in (file_values or {},):
        for key, raw in source.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{key}: unknown config key")
            try:
                setattr(config, key, _FIELD_TYPES[key](raw))
            except ValueError as e:
                raise ConfigError(f"{key}: {e}") from e
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    rows: list[tuple[int, float, float, float]]
    best_val_acc: float
    output_dir: Path


def _eval_pass(net: Network, manifest: DatasetManifest, split: str, batch_size: int,
               img_size: int, cache: dict | None):
    """Inference over a split; returns (mean_loss, labels, logits)."""
    total_loss = 0.0
    labels: list[int] = []
    logit_rows = []
    for batch in batches(manifest, split, batch_size, shuffle=False, img_size=img_size, cache=cache):
        logits = net.forward(batch.images, training=False)
        loss, _ = softmax_cross_entropy(logits, batch.labels)
        total_loss += loss * len(batch.labels)
        labels.extend(batch.labels)
        logit_rows.append(logits)
    logits = np.concatenate(logit_rows, axis=0)
    return total_loss / len(labels), labels, logits


def _accuracy_top1(labels, logits) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def _read_curves(path: Path) -> list[tuple[int, float, float, float]]:
    rows = []
    if not path.exists():
        return rows
    for line in path.read_text().splitlines()[1:]:
        e, tl, vl, va = line.split(",")
        rows.append((int(e), float(tl), float(vl), float(va)))
    return rows


def _write_plots(out: Path, rows) -> None:
    epochs = [r[0] for r in rows]
    line_chart(
        out / "loss.svg",
        [
            ("train_loss", "#d62728", epochs, [r[1] for r in rows]),
            ("val_loss", "#1f77b4", epochs, [r[2] for r in rows]),
        ],
        title="loss",
        y_label="cross-entropy",
    )
    line_chart(
        out / "accuracy.svg",
        [("val_accuracy_top1", "#2ca02c", epochs, [r[3] for r in rows])],
        title="accuracy_top1",
        y_label="accuracy",
    )


def train_run(config: RunConfig, resume: str | None = None) -> TrainResult:
    """Minibatch training with per-epoch validation, curve log, and checkpoints."""
    config.validate()
    if not config.data_root:
        raise ConfigError("data_root: required for training")
    manifest = load_manifest(config.data_root)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    curves_path = out / "curves.csv"
    echo = config.as_echo()
    hyper = config.hyper()

    lock_path = out / ".lock"
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"output_dir: {out} is locked by another training run") from None
    try:
        if resume is not None:
            ckpt = load_checkpoint(resume)
            for key in ("optimizer", "lr0", "momentum", "weight_decay",
                        "batch_size", "img_size", "seed"):
                if ckpt.config.get(key) != echo[key]:
                    raise ConfigError(
                        f"{key}: resume mismatch (checkpoint has {ckpt.config.get(key)!r}, "
                        f"config has {echo[key]!r})"
                    )
            net = rebuild_network(ckpt)
            opt = ckpt.optimizer
            start_epoch = ckpt.epoch
            best_val_acc = ckpt.best_val_acc
            if not curves_path.exists():
                curves_path.write_text(CURVE_HEADER + "\n")
        else:
            net = build_network(num_classes=2, seed=config.seed, img_size=config.img_size)
            opt = make_optimizer(config.optimizer, hyper)
            start_epoch = 0
            best_val_acc = -math.inf
            curves_path.write_text(CURVE_HEADER + "\n")
            save_checkpoint(out / "last.ckpt",
                            from_network(net, opt, 0, best_val_acc, config.seed, echo))

        params = net.parameters()
        cache: dict = {}
        for epoch in range(start_epoch + 1, config.epochs + 1):
            losses = []
            for batch in batches(manifest, "train", config.batch_size, seed=config.seed,
                                 shuffle=True, epoch=epoch, img_size=config.img_size,
                                 cache=cache):
                logits = net.forward(batch.images, training=True)
                loss, grad_logits = softmax_cross_entropy(logits, batch.labels)
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                grads = net.backward(grad_logits)
                optimizer_step(params, grads, opt, hyper)
                losses.append(loss)
            train_loss = sum(losses) / len(losses)
            val_loss, val_labels, val_logits = _eval_pass(
                net, manifest, "valid", config.batch_size, config.img_size, cache)
            val_acc = _accuracy_top1(val_labels, val_logits)
            with curves_path.open("a") as f:
                f.write(f"{epoch},{train_loss:.6f},{val_loss:.6f},{val_acc:.6f}\n")
            save_checkpoint(out / "last.ckpt",
                            from_network(net, opt, epoch, best_val_acc, config.seed, echo))
            if val_acc > best_val_acc:
                best_val_acc = val_acc
                save_checkpoint(out / "best.ckpt",
                                from_network(net, opt, epoch, best_val_acc, config.seed, echo))
    finally:
        os.close(lock_fd)
        lock_path.unlink(missing_ok=True)

    rows = _read_curves(curves_path)
    _write_plots(out, rows)
    return TrainResult(rows=rows, best_val_acc=best_val_acc, output_dir=out)


# ---------------------------------------------------------------------------
# evaluation / prediction / tsne / report
# ---------------------------------------------------------------------------


def _confusion_text(rep: metrics.MetricsReport) -> str:
    cm = rep.counts
    if cm.positive_class == 0:
        c00, c01, c10, c11 = cm.tp, cm.fn, cm.fp, cm.tn
    else:
        c00, c01, c10, c11 = cm.tn, cm.fp, cm.fn, cm.tp
    lines = [
        "0 = Autistic, 1 = Non Autistic",
        "            pred 0  pred 1",
        f"actual 0    {c00:6d}  {c01:6d}",
        f"actual 1    {c10:6d}  {c11:6d}",
        "",
        rep.as_kv_text().rstrip("\n"),
    ]
    return "\n".join(lines) + "\n"


def write_report_files(rep: metrics.MetricsReport, optimizer_name: str, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(
        metrics.CSV_HEADER + "\n" + rep.as_csv_row(optimizer_name) + "\n")
    (out / "confusion.txt").write_text(_confusion_text(rep))


def eval_checkpoint(checkpoint_path, data_root, split: str = "test",
                    positive_class: int = 0, batch_size: int = 32,
                    output_dir=None) -> metrics.MetricsReport:
    ckpt = load_checkpoint(checkpoint_path)
    net = rebuild_network(ckpt)
    manifest = load_manifest(data_root)
    _, labels, logits = _eval_pass(net, manifest, split, batch_size, ckpt.spec.img_size, None)
    rep = metrics.report(logits, labels, positive_class)
    if output_dir is not None:
        write_report_files(rep, ckpt.config.get("optimizer", "unknown"), Path(output_dir))
    return rep


def predict_image(checkpoint_path, image_path) -> tuple[str, np.ndarray]:
    """Returns (label_name, class probabilities) for one image file."""
    ckpt = load_checkpoint(checkpoint_path)
    net = rebuild_network(ckpt)
    try:
        data = Path(image_path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image file {image_path}: {e}") from e
    img = decode_image(data, ckpt.spec.img_size)
    logits = net.forward(img[None], training=False)
    probs = softmax(logits)[0]
    return LABEL_NAMES[int(np.argmax(probs))], probs


def run_tsne(data_root, split: str, dims: int, perplexity: float, seed: int,
             output_dir, iters: int = 1000, img_size: int = 128,
             feature_source: str = "raw", checkpoint_path=None):
    """Embed a split and write embedding.csv plus a class-colored scatter SVG."""
    if dims not in (2, 3):
        raise ConfigError(f"dims: must be 2 or 3, got {dims}")
    if feature_source not in ("raw", "network"):
        raise ConfigError(f"features: must be raw or network, got {feature_source!r}")
    manifest = load_manifest(data_root)
    if feature_source == "network":
        if checkpoint_path is None:
            raise ConfigError("checkpoint: required when features=network")
        ckpt = load_checkpoint(checkpoint_path)
        net = rebuild_network(ckpt)
        entries = manifest.entries(split)
        feats = []
        labels = []
        files = []
        for batch in batches(manifest, split, 32, shuffle=False, img_size=ckpt.spec.img_size):
            feats.append(net.features(batch.images))
            labels.extend(batch.labels)
            files.extend(str(entries[i][0]) for i in batch.indices)
        x = np.concatenate(feats, axis=0)
    else:
        x, labels, files = features_for_tsne(manifest, split, img_size=img_size)
    result = tsne_embed(x, d=dims, perplexity=perplexity, seed=seed, iters=iters)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    coord_names = ("x", "y", "z")[:dims]
    lines = [",".join(coord_names) + ",label,file"]
    for point, label, file in zip(result.points, labels, files):
        coords = ",".join(f"{v:.6f}" for v in point)
        lines.append(f"{coords},{label},{file}")
    (out / "embedding.csv").write_text("\n".join(lines) + "\n")
    scatter_chart(out / "tsne.svg", result.points, labels, LABEL_NAMES,
                  title=f"t-sne {split} (perplexity {perplexity:g}, kl {result.kl:.4f})")
    return result


def _read_predictions_csv(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read predictions file {path}: {e}") from e
    if not lines:
        raise DataError(f"empty predictions file: {path}")
    header = [h.strip() for h in lines[0].split(",")]
    if "label" not in header or "prediction" not in header:
        raise DataError("predictions file needs 'label' and 'prediction' columns")
    li = header.index("label")
    pi = header.index("prediction")
    si = header.index("score") if "score" in header else None
    labels, predictions, scores = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        labels.append(int(parts[li]))
        predictions.append(int(parts[pi]))
        if si is not None:
            scores.append(float(parts[si]))
    return predictions, labels, (scores if si is not None else None)


# ---------------------------------------------------------------------------
# argument parsing and command handlers
# ---------------------------------------------------------------------------


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--optimizer", choices=KINDS)
    p.add_argument("--lr0", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--img-size", dest="img_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--positive-class", dest="positive_class", type=int)
    p.add_argument("--output-dir", dest="output_dir")


def _config_from_args(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else None
    overrides = {name: getattr(args, name, None) for name in _FIELD_TYPES}
    return build_config(file_values, overrides)


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    result = train_run(config, resume=args.resume)
    if result.rows:
        last = result.rows[-1]
        print(f"trained {last[0]} epochs: train_loss={last[1]:.6f} "
              f"val_loss={last[2]:.6f} val_accuracy_top1={last[3]:.6f}")
    else:
        print("wrote init-only checkpoint (epochs=0)")
    print(f"outputs in {result.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    rep = eval_checkpoint(args.checkpoint, args.data_root, args.split,
                          args.positive_class, args.batch_size, args.output_dir)
    print(rep.as_kv_text(), end="")
    return 0


def _cmd_predict(args) -> int:
    name, probs = predict_image(args.checkpoint, args.image)
    print(f"prediction: {name}")
    for label_name, p in zip(LABEL_NAMES, probs):
        print(f"p({label_name})={p:.6f}")
    return 0


def _cmd_tsne(args) -> int:
    result = run_tsne(args.data_root, args.split, args.dims, args.perplexity,
                      args.seed, args.output_dir, iters=args.iters,
                      img_size=args.img_size, feature_source=args.features,
                      checkpoint_path=args.checkpoint)
    print(f"embedded {len(result.points)} points in {args.dims}-D, final kl={result.kl:.6f}")
    return 0


def _cmd_report(args) -> int:
    predictions, labels, scores = _read_predictions_csv(args.predictions)
    rep = metrics.report_from_predictions(predictions, labels, scores, args.positive_class)
    write_report_files(rep, args.optimizer_name, Path(args.output_dir))
    print(rep.as_kv_text(), end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c2fnet",
                                     description="binary image classifier: train/eval/predict/tsne/report")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset tree")
    _add_config_options(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", dest="data_root", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--positive-class", dest="positive_class", type=int, default=0)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--output-dir", dest="output_dir", default="runs/eval")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("tsne", help="embed a split to 2-D or 3-D")
    p.add_argument("--data-root", dest="data_root", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--img-size", dest="img_size", type=int, default=128)
    p.add_argument("--features", choices=("raw", "network"), default="raw")
    p.add_argument("--checkpoint", help="needed for --features network")
    p.add_argument("--output-dir", dest="output_dir", default="runs/tsne")
    p.set_defaults(func=_cmd_tsne)

    p = sub.add_parser("report", help="metrics report from a predictions CSV")
    p.add_argument("--predictions", required=True,
                   help="CSV with label,prediction[,score] columns")
    p.add_argument("--positive-class", dest="positive_class", type=int, default=0)
    p.add_argument("--optimizer-name", dest="optimizer_name", default="injected")
    p.add_argument("--output-dir", dest="output_dir", default="runs/report")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericError, NonFiniteError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
