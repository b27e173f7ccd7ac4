"""Config-driven experiments: build, train, evaluate, log metrics."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np
import tomli

from . import data as dataio
from .errors import ConfigError, DatasetError, NumericError
from .feedback import (
    FeedbackAlgorithm,
    apply_updates,
    backward,
    compute_updates,
    init_feedback,
)
from .metrics import MetricRecord, MetricWriter, accuracy, layer_diagnostics
from .netcore import build_network, forward, loss_and_output_error, one_hot, per_sample_loss
from .optim import GROUP_OF, Schedule, SgdState, advance_epoch
from .rng import make_rng

log = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10", "synthetic")


@dataclass
class ExperimentConfig:
    name: str
    algorithm: str
    layers: List[dict]
    dataset: dict
    seeds: List[int] = field(default_factory=lambda: [0])
    epochs: int = 1
    batch_size: int = 64
    expansion_ratio: Optional[float] = None
    sf_scaled: bool = True
    lr: float = 0.01
    momentum: float = 0.9
    decoupled_decay: bool = False
    weight_decay: dict = field(default_factory=dict)
    lr_scale: dict = field(default_factory=dict)
    milestones: List[list] = field(default_factory=list)
    decay_overrides: List[dict] = field(default_factory=list)
    norm: str = "fro"
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.feedback_algorithm()  # validates tag / ratio pairing
        self.schedule()
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.layers:
            raise ConfigError("model.layers is empty")
        if self.dataset.get("name") not in DATASETS:
            raise ConfigError(f"dataset.name must be one of {DATASETS}")
        if self.norm not in ("fro", "spectral"):
            raise ConfigError("metrics.norm must be 'fro' or 'spectral'")
        for group in list(self.weight_decay) + list(self.lr_scale):
            if group not in set(GROUP_OF.values()):
                raise ConfigError(f"unknown parameter group {group!r}")

    def feedback_algorithm(self):
        return FeedbackAlgorithm(self.algorithm, self.expansion_ratio, self.sf_scaled)

    def schedule(self):
        try:
            return Schedule(
                milestones=[tuple(m) for m in self.milestones],
                decay_overrides=[(o["epoch"], o["group"], o["value"]) for o in self.decay_overrides],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed schedule: {exc}") from exc

    def decay_for(self, group):
        if group in self.weight_decay:
            return float(self.weight_decay[group])
        # feedback weights decay like forward ones unless configured
        return float(self.weight_decay.get("W", 0.0))

    @classmethod
    def from_dict(cls, doc):
        try:
            alg = doc["algorithm"]
            opt = doc.get("optimizer", {})
            return cls(
                name=str(doc.get("name", "experiment")),
                algorithm=str(alg["tag"]),
                expansion_ratio=alg.get("expansion_ratio"),
                sf_scaled=bool(alg.get("sf_scaled", True)),
                layers=[dict(layer) for layer in doc["model"]["layers"]],
                dataset=dict(doc["dataset"]),
                seeds=[int(s) for s in doc.get("seeds", [0])],
                epochs=int(doc.get("epochs", 1)),
                batch_size=int(doc.get("batch_size", 64)),
                lr=float(opt.get("lr", 0.01)),
                momentum=float(opt.get("momentum", 0.9)),
                decoupled_decay=bool(opt.get("decoupled_decay", False)),
                weight_decay={k: float(v) for k, v in opt.get("weight_decay", {}).items()},
                lr_scale={k: float(v) for k, v in opt.get("lr_scale", {}).items()},
                milestones=[list(m) for m in opt.get("milestones", [])],
                decay_overrides=[dict(o) for o in opt.get("decay_overrides", [])],
                norm=str(doc.get("metrics", {}).get("norm", "fro")),
                output_dir=doc.get("output_dir"),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from exc

    def to_dict(self):
        alg = {"tag": self.algorithm, "sf_scaled": self.sf_scaled}
        if self.expansion_ratio is not None:
            alg["expansion_ratio"] = self.expansion_ratio
        doc = {
            "name": self.name,
            "seeds": list(self.seeds),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "algorithm": alg,
            "dataset": dict(self.dataset),
            "model": {"layers": [dict(layer) for layer in self.layers]},
            "optimizer": {
                "lr": self.lr,
                "momentum": self.momentum,
                "decoupled_decay": self.decoupled_decay,
                "weight_decay": dict(self.weight_decay),
                "lr_scale": dict(self.lr_scale),
                "milestones": [list(m) for m in self.milestones],
                "decay_overrides": [dict(o) for o in self.decay_overrides],
            },
            "metrics": {"norm": self.norm},
        }
        if self.output_dir is not None:
            doc["output_dir"] = self.output_dir
        return doc

    @classmethod
    def from_toml(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            doc = tomli.loads(path.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def preset_names():
    files = resources.files("pfalign").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def load_preset(name):
    res = resources.files("pfalign").joinpath("presets", f"{name}.toml")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ExperimentConfig.from_dict(tomli.loads(res.read_text(encoding="utf-8")))


def load_datasets(spec):
    """Return ``(train, test)`` for a dataset section of the config."""
    name = spec["name"]
    if name == "synthetic":
        kw = dict(
            dims=int(spec.get("dims", 20)),
            classes=int(spec.get("classes", 2)),
            seed=int(spec.get("seed", 0)),
            margin=float(spec.get("margin", 4.0)),
        )
        train = dataio.synthetic_classification(int(spec.get("n_train", 512)), split="train", **kw)
        test = dataio.synthetic_classification(int(spec.get("n_test", 256)), split="test", **kw)
    elif name == "mnist":
        root = spec.get("root") or None
        train = dataio.find_mnist("train", root)
        test = dataio.find_mnist("test", root)
    elif name == "cifar10":
        base = dataio.data_root(spec.get("root") or None) / "cifar10"
        train = dataio.load_cifar10_bin(base, "train")
        test = dataio.load_cifar10_bin(base, "test")
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    if spec.get("train_subset"):
        train = train.subset(int(spec["train_subset"]))
    if spec.get("test_subset"):
        test = test.subset(int(spec["test_subset"]))
    if len(train) == 0 or len(test) == 0:
        raise DatasetError("empty train or test split")
    return train, test


def evaluate(net, dataset, chunk=2000):
    """Mean cross-entropy and accuracy of ``net`` over a whole split."""
    total, correct = 0.0, 0.0
    for start in range(0, len(dataset), chunk):
        x = dataset.images[start : start + chunk]
        y = dataset.labels[start : start + chunk]
        logits = forward(net, x).logits
        total += float(per_sample_loss(logits, one_hot(y, dataset.num_classes)).sum())
        correct += accuracy(logits, y) * len(y)
    return total / len(dataset), correct / len(dataset)


@dataclass
class SeedResult:
    seed: int
    final_test_acc: float
    final_test_loss: float
    layer_angles: List[Optional[float]]
    layer_norm_ratios: List[Optional[float]]


@dataclass
class RunSummary:
    name: str
    algorithm: str
    seeds: List[SeedResult]
    wall_clock_s: float = field(default=0.0, compare=False)

    @property
    def accuracies(self):
        return [s.final_test_acc for s in self.seeds]

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self):
        return float(np.std(self.accuracies))

    def to_dict(self):
        doc = asdict(self)
        del doc["wall_clock_s"]  # keeps summary.json byte-identical across reruns
        doc["mean_test_acc"] = self.mean_accuracy
        doc["std_test_acc"] = self.std_accuracy
        return doc


class Trainer:
    """One seed of one experiment; owns the network, feedback and optimizer."""

    def __init__(self, config, seed, input_shape, num_classes):
        self.config = config
        self.seed = seed
        self.num_classes = num_classes
        self.net = build_network(input_shape, config.layers, make_rng(seed, "init"))
        if int(np.prod(self.net.shapes[-1])) != num_classes:
            raise ConfigError(f"output layer must have {num_classes} units")
        self.state = init_feedback(self.net, config.feedback_algorithm(), seed)
        groups = set(GROUP_OF.values())
        self.sgd = SgdState(
            lr=config.lr,
            momentum=config.momentum,
            weight_decay={g: config.decay_for(g) for g in groups},
            decoupled=config.decoupled_decay,
            lr_scale=dict(config.lr_scale),
        )
        self.schedule = config.schedule()

    def train_step(self, x, labels):
        cache = forward(self.net, x)
        loss, e_out = loss_and_output_error(cache.logits, one_hot(labels, self.num_classes))
        errors = backward(self.state, self.net, cache, e_out)
        updates = compute_updates(self.state, self.net, cache, errors, self.sgd.lr)
        apply_updates(self.net, self.state, updates, self.sgd)
        return loss, errors

    def run_epoch(self, epoch, train, augment=False):
        advance_epoch(self.schedule, epoch, self.sgd)
        total = 0.0
        batch_iter = dataio.batches(train, self.config.batch_size, self.seed, epoch)
        for b, (x, labels) in enumerate(batch_iter):
            if augment:
                x = dataio.augment_cifar(x, make_rng(self.seed, "augment", epoch, b))
            loss, _ = self.train_step(x, labels)
            total += loss * len(labels)
        return total / len(train)

    def records(self, epoch, train_loss, test_loss, test_acc):
        out = []
        for i in range(self.net.depth):
            angle, ratio = layer_diagnostics(self.net, self.state, i, self.config.norm)
            out.append(
                MetricRecord(epoch, i, self.state.tag, angle, ratio, train_loss, test_loss, test_acc)
            )
        return out


def run_seed(config, seed, train, test, writer=None, on_epoch=None):
    trainer = Trainer(config, seed, train.images.shape[1:], train.num_classes)
    augment = bool(config.dataset.get("augment", False))
    train_loss, _ = evaluate(trainer.net, train)
    test_loss, test_acc = evaluate(trainer.net, test)
    recs = trainer.records(0, train_loss, test_loss, test_acc)
    if writer:
        writer.write(recs)
    for epoch in range(config.epochs):
        train_loss = trainer.run_epoch(epoch, train, augment)
        if not math.isfinite(train_loss):
            raise NumericError(f"training loss diverged in epoch {epoch}")
        test_loss, test_acc = evaluate(trainer.net, test)
        recs = trainer.records(epoch + 1, train_loss, test_loss, test_acc)
        if writer:
            writer.write(recs)
        if on_epoch:
            on_epoch(trainer, recs)
        log.info(
            "%s seed %d epoch %d: train %.4f test %.4f acc %.4f",
            config.name, seed, epoch + 1, train_loss, test_loss, test_acc,
        )
    result = SeedResult(
        seed=seed,
        final_test_acc=test_acc,
        final_test_loss=test_loss,
        layer_angles=[r.angle_deg for r in recs],
        layer_norm_ratios=[r.norm_ratio for r in recs],
    )
    return result, trainer


def train(config, out_dir=None, datasets=None, on_epoch=None):
    """Run every seed of ``config``; CSVs and ``summary.json`` go to ``out_dir``.

    Datasets are loaded (or taken from ``datasets``) before anything is
    written, so a bad dataset leaves no output behind.
    """
    started = time.perf_counter()
    train_ds, test_ds = datasets if datasets is not None else load_datasets(config.dataset)
    out = Path(out_dir or config.output_dir) if (out_dir or config.output_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    results = []
    for seed in config.seeds:
        if out is not None:
            with MetricWriter(out / f"metrics_seed{seed}.csv") as writer:
                result, _ = run_seed(config, seed, train_ds, test_ds, writer, on_epoch)
        else:
            result, _ = run_seed(config, seed, train_ds, test_ds, None, on_epoch)
        results.append(result)
    summary = RunSummary(config.name, config.algorithm, results, time.perf_counter() - started)
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
        (out / "timing.json").write_text(json.dumps({"wall_clock_s": summary.wall_clock_s}))
    return summary
