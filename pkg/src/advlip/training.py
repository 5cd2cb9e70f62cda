"""The full optimization protocol: momentum SGD over 8+8 augmented batches,
inverse-frequency word weighting, the staircase adversarial weight, source
validation early stopping with patience, and per-epoch metrics logging."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from .data import FrameSequence, UnlabeledSequence
from .errors import ConfigError, NumericalError
from .evaluate import word_accuracy
from .model import Model, backward_batch, forward_sequence
from .tensor import Rng

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,lambda,word_loss,speaker_loss,src_val_acc,tgt_val_acc,speaker_frame_acc"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.5
    batch_source: int = 8
    batch_target: int = 8
    adv_step: float = 0.2
    adv_epoch_interval: int = 10
    adv_max: float = 1.0
    patience: int = 30
    max_epochs: int = 500
    seed: int = 0
    target_pool_limit: Optional[int] = None

    def __post_init__(self):
        for name in (
            "learning_rate",
            "batch_source",
            "batch_target",
            "adv_step",
            "adv_epoch_interval",
            "adv_max",
            "patience",
            "max_epochs",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.target_pool_limit is not None and self.target_pool_limit < 1:
            raise ConfigError(f"target_pool_limit must be positive, got {self.target_pool_limit}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **kwargs) -> "TrainConfig":
        provided = {k: v for k, v in kwargs.items() if v is not None}
        return TrainConfig.from_dict({**self.to_dict(), **provided})


def class_weights(labels: Sequence[int], n_classes: int) -> np.ndarray:
    """w(c) = N / (C * count(c)); every class's weighted mass is then N/C."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for lbl in labels:
        if not 0 <= lbl < n_classes:
            raise ConfigError(f"label {lbl} outside [0, {n_classes})")
        counts[lbl] += 1
    if (counts == 0).any():
        missing = np.flatnonzero(counts == 0).tolist()
        raise ConfigError(f"classes absent from the training labels: {missing}")
    total = counts.sum()
    return total / (n_classes * counts.astype(np.float64))


def adversarial_weight(epoch: int, config: TrainConfig) -> float:
    """Staircase schedule: 0 at the start, +adv_step every adv_epoch_interval
    epochs, capped at adv_max.

    Computed in decimal-exact rational arithmetic so configured decimals land
    on their exact float values (0.2 * 3 must be 0.6, not 0.6000000000000001).
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    lam = Fraction(str(config.adv_step)) * (epoch // config.adv_epoch_interval)
    return float(min(lam, Fraction(str(config.adv_max))))


class TargetCycler:
    """Shuffled cyclic sampler over the target pool.

    Draws walk a permutation of the pool; each exhaustion reshuffles, so
    within an epoch every pool member is used either floor or ceil of
    (draws / pool size) times.  Per-sequence usage is counted for
    instrumentation.
    """

    def __init__(self, pool: Sequence, rng: Rng):
        if not pool:
            raise ConfigError("target pool is empty")
        self.pool = list(pool)
        self._rng = rng
        self._order: List[int] = []
        self.usage_counts = np.zeros(len(self.pool), dtype=np.int64)

    def draw(self, n: int) -> List:
        out = []
        for _ in range(n):
            if not self._order:
                self._order = list(self._rng.permutation(len(self.pool)))
            idx = self._order.pop()
            self.usage_counts[idx] += 1
            out.append(self.pool[idx])
        return out


def epoch_batches(n_source: int, batch_size: int, rng: Rng) -> Iterator[np.ndarray]:
    """Shuffled source indices in batches of exactly batch_size; a final
    partial batch is dropped (the 8+8 contract is never diluted)."""
    order = rng.permutation(n_source)
    n_full = n_source // batch_size
    dropped = n_source - n_full * batch_size
    if dropped:
        log.debug("dropping %d source sequences that do not fill a batch", dropped)
    for b in range(n_full):
        yield order[b * batch_size : (b + 1) * batch_size]


def momentum_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: Dict[str, np.ndarray],
    config: TrainConfig,
) -> None:
    """Heavy-ball update in place: accum <- mu*accum + grad;
    param <- param - lr*accum."""
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}; aborting training")
        acc = state[name]
        acc *= config.momentum
        acc += g
        p -= config.learning_rate * acc


def zero_optimizer_state(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


class EarlyStopper:
    """Tracks the best validation metric (higher is better, strict
    improvement, ties keep the earlier epoch) and signals a stop once more
    than ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ConfigError(f"patience must be positive, got {patience}")
        self.patience = patience
        self.best_value = -math.inf
        self.best_epoch = -1
        self.epochs_since_improvement = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch's metric; True means improvement (snapshot now)."""
        if value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_improvement > self.patience


@dataclass
class MetricsRow:
    epoch: int
    lam: float
    word_loss: float
    speaker_loss: float
    src_val_acc: float
    tgt_val_acc: float
    speaker_frame_acc: float

    def format(self) -> str:
        vals = (
            self.lam,
            self.word_loss,
            self.speaker_loss,
            self.src_val_acc,
            self.tgt_val_acc,
            self.speaker_frame_acc,
        )
        return ",".join([str(self.epoch)] + [f"{v:.9g}" for v in vals])


@dataclass
class MetricsLog:
    rows: List[MetricsRow] = field(default_factory=list)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.format() for r in self.rows]) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


@dataclass
class TrainData:
    """Split bundle handed to the trainer.

    source_train/source_val are labeled; target_pool is the label-stripped
    adversarial pool (None for baseline training); target_val is optional and
    used only for the diagnostic accuracy column.
    """

    source_train: List[FrameSequence]
    source_val: List[FrameSequence]
    target_pool: Optional[List[UnlabeledSequence]] = None
    target_val: Optional[List[FrameSequence]] = None


@dataclass
class TrainResult:
    model: Model
    metrics: MetricsLog
    best_epoch: int
    best_val_acc: float
    epochs_run: int
    domain_of: Dict[int, int]
    target_usage_counts: Optional[np.ndarray]


def _validate(model: Model, data: TrainData, config: TrainConfig, adversarial: bool) -> None:
    if not data.source_train:
        raise ConfigError("source training split is empty")
    if not data.source_val:
        raise ConfigError("source validation split is empty")
    if any(s.word_label is None for s in data.source_train):
        raise ConfigError("source training sequences must be labeled")
    if any(s.word_label is None for s in data.source_val):
        raise ConfigError("source validation sequences must be labeled")
    labels = [s.word_label for s in data.source_train]
    if max(labels) >= model.config.word_classes:
        raise ConfigError(
            f"label {max(labels)} outside the model's {model.config.word_classes} word classes"
        )
    if len(data.source_train) < config.batch_source:
        raise ConfigError(
            f"source training split ({len(data.source_train)}) smaller than one batch "
            f"({config.batch_source})"
        )
    if adversarial:
        n_source_speakers = len({s.speaker_id for s in data.source_train})
        wanted = n_source_speakers + 1
        if model.config.adv_domains != wanted:
            raise ConfigError(
                f"speaker head has {model.config.adv_domains} outputs but the run has "
                f"{n_source_speakers} source speakers + 1 target = {wanted}"
            )


def train(
    model: Model,
    data: TrainData,
    config: TrainConfig,
    batch_hook: Optional[Callable] = None,
) -> TrainResult:
    """Run the training loop; adversarial mode iff a target pool is present.

    Returns the checkpoint from the best source-validation epoch.  The
    optional batch_hook receives (epoch, source_batch, target_batch, lam)
    before each update, for instrumentation.
    """
    adversarial = data.target_pool is not None
    _validate(model, data, config, adversarial)

    weights = class_weights(
        [s.word_label for s in data.source_train], model.config.word_classes
    )
    source_speakers = sorted({s.speaker_id for s in data.source_train})
    domain_of = {sid: i for i, sid in enumerate(source_speakers)}
    if adversarial:
        for view in data.target_pool:
            domain_of.setdefault(view.speaker_id, len(source_speakers))

    rng_shuffle = Rng(config.seed, "shuffle")
    rng_dropout = Rng(config.seed, "dropout")
    cycler = TargetCycler(data.target_pool, rng_shuffle) if adversarial else None

    opt_state = zero_optimizer_state(model.params)
    stopper = EarlyStopper(config.patience)
    best_params = model.copy_params()
    metrics = MetricsLog()
    epochs_run = 0

    for epoch in range(config.max_epochs):
        lam = adversarial_weight(epoch, config) if adversarial else 0.0
        loss_word_sum = 0.0
        loss_speaker_sum = 0.0
        frames_right = 0
        frames_total = 0
        n_batches = 0

        for idxs in epoch_batches(len(data.source_train), config.batch_source, rng_shuffle):
            source_batch = [data.source_train[i] for i in idxs]
            target_batch = cycler.draw(config.batch_target) if adversarial else []
            if batch_hook is not None:
                batch_hook(epoch, source_batch, target_batch, lam)
            seqs = list(source_batch) + list(target_batch)
            outputs = [
                forward_sequence(
                    model, s.frames, training=True, lam=lam, rng=rng_dropout,
                    need_speaker=adversarial,
                )
                for s in seqs
            ]
            word_labels = [s.word_label for s in source_batch] + [None] * len(target_batch)
            domains = [domain_of[s.speaker_id] for s in seqs]
            grads, loss_word, loss_speaker = backward_batch(
                model, outputs, word_labels, domains, weights, lam,
                include_speaker=adversarial,
            )
            if not (np.isfinite(loss_word) and np.isfinite(loss_speaker)):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}: word={loss_word}, speaker={loss_speaker}"
                )
            momentum_step(model.params, grads, opt_state, config)
            loss_word_sum += loss_word
            loss_speaker_sum += loss_speaker
            if adversarial:
                for out, dom in zip(outputs, domains):
                    frames_right += int((np.argmax(out.speaker_logits, axis=1) == dom).sum())
                    frames_total += out.length
            n_batches += 1

        if n_batches == 0:
            raise ConfigError("no full batches in an epoch; reduce batch_source")

        src_val_acc = word_accuracy(model, data.source_val)
        tgt_val_acc = word_accuracy(model, data.target_val) if data.target_val else math.nan
        metrics.rows.append(
            MetricsRow(
                epoch=epoch,
                lam=lam,
                word_loss=loss_word_sum / n_batches,
                speaker_loss=(loss_speaker_sum / n_batches) if adversarial else math.nan,
                src_val_acc=src_val_acc,
                tgt_val_acc=tgt_val_acc,
                speaker_frame_acc=(frames_right / frames_total) if frames_total else math.nan,
            )
        )
        epochs_run = epoch + 1
        if stopper.update(epoch, src_val_acc):
            best_params = model.copy_params()
        if stopper.should_stop:
            log.info(
                "early stop at epoch %d; best src val acc %.4f at epoch %d",
                epoch, stopper.best_value, stopper.best_epoch,
            )
            break

    return TrainResult(
        model=Model(model.config, best_params),
        metrics=metrics,
        best_epoch=stopper.best_epoch,
        best_val_acc=stopper.best_value,
        epochs_run=epochs_run,
        domain_of=domain_of,
        target_usage_counts=cycler.usage_counts.copy() if cycler else None,
    )
