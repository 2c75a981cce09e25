"""Multimodal classifier assembly, training loop, and sweep harness.

The image branch runs the separable-conv extractor, a learned expansion
into capsules, routing, and self-attention pooling into the image
embedding.  The location branch encodes the simplified body-map location
(one-hot or learned embedding) and runs it through the ridge-gated
recurrent cell.  The two embeddings are concatenated and classified by a
small dense head with inverted dropout and a softmax output.

Modes mirror the ablations: `image_only` feeds the head from the image
embedding alone, `location_only` from the recurrent output alone, and
`multimodal` from their concatenation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .attention import AttentionConfig, ImageVectorHead
from .capsule import CapsuleLayer, PrimaryCapsuleConfig
from .data_io import (
    META_CONFIG_KEY,
    WOUND_CLASSES,
    AugmentPolicy,
    BodyMap,
    augment,
    decode_meta_json,
    encode_meta_json,
    ingest_image,
    load_checkpoint,
    save_checkpoint,
)
from .errors import ConfigError, DataError
from .gmrnn import GmrnnCell, RidgeEstimator, location_vector, one_hot
from .metrics import MetricsReport, score
from .rng import SplitMix64
from .sepconv import FeatureExtractor, FeatureExtractorConfig
from . import tensor as T
from .tensor import Parameter, Tensor, no_grad

MODES = ("image_only", "location_only", "multimodal")


@dataclass
class FusionModelConfig:
    classes: tuple[str, ...] = ("D", "P", "S", "V")
    mode: str = "multimodal"
    # image branch
    image_size: int = 224
    extractor_channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3
    caps_n_in: int = 32
    caps_d_in: int = 8
    caps_n_out: int = 16
    caps_d_out: int = 16
    routing_iterations: int = 3
    d_img: int = 128
    # location branch
    hidden_dim: int = 64
    location_encoding: str = "onehot"  # onehot | embedding
    embedding_dim: int = 64
    lam: float = 1.0
    sigma2: float = 1.0
    # head and training
    head_sizes: tuple[int, ...] = (128, 64)
    dropout: float = 0.5
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    split: float = 0.8
    augment_copies: int = 0

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.extractor_channels = tuple(self.extractor_channels)
        self.head_sizes = tuple(self.head_sizes)
        unknown = [c for c in self.classes if c not in WOUND_CLASSES]
        if unknown:
            raise ConfigError(f"unknown class token(s) {unknown}; "
                              f"valid: {'/'.join(WOUND_CLASSES)}")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError(f"duplicate class tokens in {self.classes}")
        if len(self.classes) < 2:
            raise ConfigError("need at least two classes")
        # canonical class order, independent of flag order
        self.classes = tuple(c for c in WOUND_CLASSES if c in self.classes)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.location_encoding not in ("onehot", "embedding"):
            raise ConfigError("location_encoding must be onehot or embedding")
        if not 0.0 < self.split <= 1.0:
            raise ConfigError(f"split must be in (0, 1], got {self.split}")
        if self.caps_n_in * self.caps_d_in < 1:
            raise ConfigError("capsule geometry must be positive")

    @property
    def n_classes(self):
        return len(self.classes)


def fuse(img: Tensor, loc: Tensor) -> Tensor:
    """Concatenate the image and location embeddings (image part first)."""
    return T.concat([img, loc])


def cross_entropy(logits: Tensor, target_index: int) -> Tensor:
    """Stable softmax cross-entropy from logits."""
    shift = float(np.max(logits.data))
    z = T.sub(logits, shift)
    lse = T.log(T.tsum(T.exp(z)))
    marker = Tensor(one_hot(target_index, logits.data.shape[0]))
    return T.sub(lse, T.dot(z, marker))


def _dropout(x: Tensor, p: float, rng: SplitMix64 | None) -> Tensor:
    """Inverted dropout: identity at evaluation (rng None) or p == 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.uniform(x.data.shape) >= p).astype(np.float64) / (1.0 - p)
    return T.mul(x, Tensor(keep))


class _Dense:
    def __init__(self, n_in, n_out, rng, name):
        self.w = Parameter(rng.normal((n_out, n_in), np.sqrt(1.0 / n_in)), f"{name}.w")
        self.b = Parameter(np.zeros(n_out), f"{name}.b")

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x):
        return T.add(T.matmul(self.w.value, x), self.b.value)


class WoundClassifier:
    """End-to-end fusion model; components depend on the configured mode."""

    def __init__(self, config: FusionModelConfig, body_map: BodyMap,
                 rng: SplitMix64 | None = None):
        self.config = config
        self.body_map = body_map
        rng = rng if rng is not None else SplitMix64(config.seed)
        self.n_locations = len(body_map.simplified_ids)

        head_in = 0
        if config.mode != "location_only":
            ext_cfg = FeatureExtractorConfig(
                channels=list(config.extractor_channels),
                kernel_size=config.kernel_size,
                input_size=config.image_size)
            self.extractor = FeatureExtractor(ext_cfg, rng)
            caps_cfg = PrimaryCapsuleConfig(
                n_in=config.caps_n_in, d_in=config.caps_d_in,
                n_out=config.caps_n_out, d_out=config.caps_d_out,
                routing_iterations=config.routing_iterations)
            self.expansion = _Dense(ext_cfg.feature_dim, caps_cfg.flat_in, rng, "expansion")
            self.capsules = CapsuleLayer(caps_cfg, rng)
            self.attention = ImageVectorHead(config.caps_n_out, config.caps_d_out,
                                             AttentionConfig(d_img=config.d_img), rng)
            head_in += config.d_img
        if config.mode != "image_only":
            if config.location_encoding == "embedding":
                self.embedding = Parameter(
                    rng.normal((self.n_locations, config.embedding_dim),
                               np.sqrt(1.0 / config.embedding_dim)), "location.embedding")
                cell_in = config.embedding_dim
                fan_in = config.embedding_dim
            else:
                self.embedding = None
                cell_in = self.n_locations
                fan_in = 1  # one-hot activates a single input column
            self.cell_input_dim = cell_in
            self.gmrnn = GmrnnCell(cell_in, config.hidden_dim, rng, input_fan_in=fan_in)
            head_in += config.hidden_dim

        self.head = []
        prev = head_in
        for i, width in enumerate(config.head_sizes):
            self.head.append(_Dense(prev, width, rng, f"head.{i}"))
            prev = width
        self.output = _Dense(prev, config.n_classes, rng, "head.out")
        # location embeddings are pure functions of (parameters, location);
        # cache them between parameter updates
        self._loc_cache = {}

    # -- parameter registry ------------------------------------------------

    def parameters(self) -> dict[str, Parameter]:
        params = []
        cfg = self.config
        if cfg.mode != "location_only":
            params += self.extractor.parameters()
            params += self.expansion.parameters()
            params += self.capsules.parameters()
            params += self.attention.parameters()
        if cfg.mode != "image_only":
            if self.embedding is not None:
                params.append(self.embedding)
            params += self.gmrnn.parameters()
        for layer in self.head:
            params += layer.parameters()
        params += self.output.parameters()
        table = {}
        for p in params:
            if p.name in table:
                raise ConfigError(f"duplicate parameter name {p.name}")
            table[p.name] = p
        return table

    def zero_grads(self):
        for p in self.parameters().values():
            p.zero_grad()

    # -- forward -------------------------------------------------------------

    def image_vector(self, image: np.ndarray) -> Tensor:
        feats = self.extractor.forward(T.as_tensor(image))
        expanded = self.expansion(feats)
        caps = self.capsules.forward(expanded)
        return self.attention.forward(caps)

    def loc_vector(self, raw_location_id: int) -> Tensor:
        idx = self.body_map.index_of(raw_location_id)
        key = (idx, T.grad_enabled())
        cached = self._loc_cache.get(key)
        if cached is not None:
            return cached
        if self.embedding is not None:
            x = T.take_row(self.embedding.value, idx)
        else:
            x = Tensor(one_hot(idx, self.n_locations))
        est = RidgeEstimator(self.cell_input_dim, self.config.lam, self.config.sigma2)
        out = location_vector([x], self.gmrnn, est)
        self._loc_cache[key] = out
        return out

    def invalidate_caches(self):
        """Must run after every parameter update."""
        self._loc_cache.clear()

    def logits(self, image=None, location=None, train_rng=None) -> Tensor:
        cfg = self.config
        if cfg.mode != "location_only" and image is None:
            raise DataError(f"mode {cfg.mode} requires an image input")
        if cfg.mode != "image_only" and location is None:
            raise DataError(f"mode {cfg.mode} requires a location input")
        if cfg.mode == "image_only":
            x = self.image_vector(image)
        elif cfg.mode == "location_only":
            x = self.loc_vector(location)
        else:
            x = fuse(self.image_vector(image), self.loc_vector(location))
        for layer in self.head:
            x = _dropout(T.relu(layer(x)), cfg.dropout, train_rng)
        return self.output(x)

    def forward(self, image=None, location=None, train_rng=None) -> Tensor:
        """Class probabilities over the configured class set."""
        return T.softmax(self.logits(image, location, train_rng))

    def predict_index(self, image=None, location=None) -> int:
        with no_grad():
            probs = self.forward(image, location)
        return int(np.argmax(probs.data))


# -- optimizers ---------------------------------------------------------------------


class Sgd:
    def __init__(self, params: dict[str, Parameter], lr: float):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params.values():
            p.value.data -= self.lr * p.grad


class Adam:
    def __init__(self, params: dict[str, Parameter], lr: float,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            m_hat = self.m[k] / (1 - b1 ** self.t)
            v_hat = self.v[k] / (1 - b2 ** self.t)
            p.value.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, params, lr):
    return Adam(params, lr) if name == "adam" else Sgd(params, lr)


# -- dataset ------------------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray | None
    raw_location_id: int
    label_index: int


def build_dataset(records, config: FusionModelConfig, body_map: BodyMap) -> list[Sample]:
    """Ingest, validate, and optionally augment the manifest records."""
    if not records:
        raise DataError("empty manifest: nothing to train on")
    class_index = {c: i for i, c in enumerate(config.classes)}
    offenders = [f"{r.image_path} (label {r.label})"
                 for r in records if r.label not in class_index]
    if offenders:
        raise DataError(f"{len(offenders)} record(s) outside class set "
                        f"{'/'.join(config.classes)}: {', '.join(offenders[:5])}")
    need_images = config.mode != "location_only"
    target = (config.image_size, config.image_size)
    samples = []
    policy = AugmentPolicy()
    for idx, rec in enumerate(records):
        body_map.simplify(rec.raw_location_id)  # fail fast on unmapped ids
        image = ingest_image(rec.image_path, target) if need_images else None
        samples.append(Sample(image, rec.raw_location_id, class_index[rec.label]))
        if need_images:
            for copy in range(config.augment_copies):
                aug_seed = (config.seed * 1_000_003 + idx * 131 + copy) & 0xFFFFFFFFFFFFFFFF
                samples.append(Sample(augment(image, policy, aug_seed),
                                      rec.raw_location_id, class_index[rec.label]))
    return samples


# -- training ----------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainingReport:
    seed: int
    mode: str
    classes: tuple[str, ...]
    split: float
    n_train: int
    n_eval: int
    epochs: list[EpochStats]
    final_train_accuracy: float
    eval_report: MetricsReport
    wall_clock_s: float  # log-stream only; excluded from serialized artifacts

    def epochs_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "train_accuracy"])
            for e in self.epochs:
                writer.writerow([e.epoch, f"{e.loss:.12g}", f"{e.accuracy:.12g}"])

    def summary_dict(self):
        return {
            "seed": self.seed,
            "mode": self.mode,
            "classes": list(self.classes),
            "split": self.split,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "final_train_accuracy": self.final_train_accuracy,
            "final_loss": self.epochs[-1].loss if self.epochs else None,
            "eval": self.eval_report.to_dict(),
        }


def _accuracy(model: WoundClassifier, samples) -> float:
    correct = 0
    with no_grad():
        for s in samples:
            probs = model.forward(image=s.image, location=s.raw_location_id)
            correct += int(np.argmax(probs.data)) == s.label_index
    return correct / len(samples) if samples else 0.0


def _eval_labels(model: WoundClassifier, samples, classes):
    true, pred = [], []
    with no_grad():
        for s in samples:
            probs = model.forward(image=s.image, location=s.raw_location_id)
            true.append(classes[s.label_index])
            pred.append(classes[int(np.argmax(probs.data))])
    return true, pred


def train(records, config: FusionModelConfig, body_map: BodyMap | None = None,
          dataset: list[Sample] | None = None):
    """Train a fresh model; deterministic given config.seed.

    Returns (model, TrainingReport, rng) where rng carries the final
    generator state for checkpointing.
    """
    body_map = body_map or BodyMap.default()
    if dataset is None:
        dataset = build_dataset(records, config, body_map)
    if not dataset:
        raise DataError("empty dataset")
    started = time.perf_counter()

    rng = SplitMix64(config.seed)
    model = WoundClassifier(config, body_map, rng=rng)
    params = model.parameters()
    optimizer = make_optimizer(config.optimizer, params, config.learning_rate)

    n = len(dataset)
    if config.split < 1.0 and n >= 2:
        perm = rng.permutation(n)
        n_train = max(1, int(round(config.split * n)))
        train_set = [dataset[i] for i in perm[:n_train]]
        eval_set = [dataset[i] for i in perm[n_train:]] or train_set
    else:
        train_set = list(dataset)
        eval_set = list(dataset)

    stats = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        total_loss = 0.0
        hits = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            model.zero_grads()
            loss = None
            for s in batch:
                logits = model.logits(image=s.image, location=s.raw_location_id,
                                      train_rng=rng)
                hits += int(np.argmax(logits.data)) == s.label_index
                sample_loss = cross_entropy(logits, s.label_index)
                loss = sample_loss if loss is None else T.add(loss, sample_loss)
            loss = T.mul(loss, 1.0 / len(batch))
            loss.backward()
            optimizer.step()
            model.invalidate_caches()
            total_loss += loss.item() * len(batch)
        # running accuracy over the epoch's training passes (dropout active)
        stats.append(EpochStats(epoch, total_loss / len(train_set),
                                hits / len(train_set)))

    final_train_accuracy = _accuracy(model, train_set)
    true, pred = _eval_labels(model, eval_set, config.classes)
    report = TrainingReport(
        seed=config.seed,
        mode=config.mode,
        classes=config.classes,
        split=config.split,
        n_train=len(train_set),
        n_eval=len(eval_set),
        epochs=stats,
        final_train_accuracy=final_train_accuracy,
        eval_report=score(true, pred, config.classes),
        wall_clock_s=time.perf_counter() - started,
    )
    return model, report, rng


def evaluate(model: WoundClassifier, records, body_map: BodyMap) -> MetricsReport:
    dataset = build_dataset(records, model.config, body_map)
    true, pred = _eval_labels(model, dataset, model.config.classes)
    return score(true, pred, model.config.classes)


# -- checkpoint integration -----------------------------------------------------------


def save_model(model: WoundClassifier, path, rng_state: int = 0):
    table = {name: p.data for name, p in model.parameters().items()}
    meta = {
        "format": 1,
        "config": asdict(model.config),
        "rng_state": rng_state,
        "n_locations": model.n_locations,
    }
    table[META_CONFIG_KEY] = encode_meta_json(meta)
    save_checkpoint(table, path)


def load_model(path, body_map: BodyMap | None = None):
    """Rebuild a model from a checkpoint; returns (model, config, rng_state)."""
    body_map = body_map or BodyMap.default()
    table = load_checkpoint(path)
    if META_CONFIG_KEY not in table:
        raise ConfigError(f"checkpoint {path} lacks the config entry")
    meta = decode_meta_json(table.pop(META_CONFIG_KEY))
    config = FusionModelConfig(**meta["config"])
    model = WoundClassifier(config, body_map, rng=SplitMix64(config.seed))
    if meta.get("n_locations") != model.n_locations:
        raise ConfigError(f"checkpoint encodes {meta.get('n_locations')} locations "
                          f"but body map provides {model.n_locations}")
    params = model.parameters()
    missing = set(params) - set(table)
    extra = set(table) - set(params)
    if missing or extra:
        raise ConfigError(f"checkpoint/model parameter mismatch; "
                          f"missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
    for name, p in params.items():
        if table[name].shape != p.data.shape:
            raise ConfigError(f"parameter {name} has shape {table[name].shape}, "
                              f"expected {p.data.shape}")
        p.value.data[:] = table[name]
    return model, config, meta.get("rng_state", 0)


# -- sweep -------------------------------------------------------------------------


DEFAULT_BATCH_GRID = (4, 8, 16, 32, 64)
DEFAULT_DROPOUT_GRID = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class SweepCell:
    batch_size: int
    dropout: float
    accuracy: float | None
    runtime_s: float
    status: str  # ok | failed
    error: str = ""


@dataclass
class SweepReport:
    cells: list[SweepCell] = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["batch_size", "dropout", "accuracy", "runtime_s", "status", "error"])
            for c in self.cells:
                writer.writerow([c.batch_size, f"{c.dropout:g}",
                                 "" if c.accuracy is None else f"{c.accuracy:.6f}",
                                 f"{c.runtime_s:.3f}", c.status, c.error])

    @property
    def n_succeeded(self):
        return sum(1 for c in self.cells if c.status == "ok")

    def best(self):
        ok = [c for c in self.cells if c.accuracy is not None]
        return max(ok, key=lambda c: c.accuracy) if ok else None


def sweep(records, config: FusionModelConfig, body_map: BodyMap | None = None,
          batch_grid=DEFAULT_BATCH_GRID, dropout_grid=DEFAULT_DROPOUT_GRID) -> SweepReport:
    """Train one model per (batch, dropout) cell; failures do not abort the grid."""
    from dataclasses import replace

    if not batch_grid or not dropout_grid:
        raise ConfigError("sweep grid is empty")
    body_map = body_map or BodyMap.default()
    dataset = build_dataset(records, config, body_map)
    report = SweepReport()
    for batch in batch_grid:
        for p in dropout_grid:
            t0 = time.perf_counter()
            try:
                cell_cfg = replace(config, batch_size=int(batch), dropout=float(p))
                _, training, _ = train(records, cell_cfg, body_map, dataset=dataset)
                report.cells.append(SweepCell(
                    int(batch), float(p), training.eval_report.accuracy,
                    time.perf_counter() - t0, "ok"))
            except Exception as e:  # recorded per cell, grid continues
                report.cells.append(SweepCell(
                    int(batch), float(p), None,
                    time.perf_counter() - t0, "failed", f"{type(e).__name__}: {e}"))
    return report
