"""Network assembly and the per-sequence forward / per-batch backward passes.

Topology: a shared feedforward trunk applied to every frame, an LSTM over the
trunk outputs with a word softmax read only at the final frame, and a
framewise speaker head attached to an inner trunk activation through a
gradient-reversal operation.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layers
from .errors import ConfigError, DataIntegrityError, ShapeError
from .layers import LstmParams
from .tensor import Rng, read_tensor, truncated_normal_init, write_tensor

WEIGHT_STD = 0.1
CHECKPOINT_MAGIC = b"ADVCKPT1"


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of every layer; defaults reproduce the full-size network."""

    height: int = 40
    width: int = 40
    trunk_widths: Tuple[int, ...] = (256, 256, 256)
    dropout_ratio: float = 0.5
    lstm_units: int = 256
    word_classes: int = 51
    adv_attach_index: int = 2  # speaker head reads the output of this trunk layer (1-based)
    adv_widths: Tuple[int, ...] = (100, 100)
    adv_domains: int = 2

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(int(w) for w in self.trunk_widths))
        object.__setattr__(self, "adv_widths", tuple(int(w) for w in self.adv_widths))
        self.validate()

    def validate(self):
        for name in ("height", "width", "lstm_units", "word_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.trunk_widths or any(w < 1 for w in self.trunk_widths):
            raise ConfigError(f"trunk_widths must all be positive, got {self.trunk_widths}")
        if any(w < 1 for w in self.adv_widths):
            raise ConfigError(f"adv_widths must all be positive, got {self.adv_widths}")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ConfigError(f"dropout_ratio must be in [0, 1), got {self.dropout_ratio}")
        if not 1 <= self.adv_attach_index <= len(self.trunk_widths):
            raise ConfigError(
                f"adv_attach_index must be in [1, {len(self.trunk_widths)}], got {self.adv_attach_index}"
            )
        if self.adv_domains < 2:
            raise ConfigError(f"adv_domains must be >= 2, got {self.adv_domains}")

    @property
    def input_dim(self) -> int:
        return self.height * self.width

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trunk_widths"] = list(self.trunk_widths)
        d["adv_widths"] = list(self.adv_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        if "trunk_widths" in kwargs:
            kwargs["trunk_widths"] = tuple(kwargs["trunk_widths"])
        if "adv_widths" in kwargs:
            kwargs["adv_widths"] = tuple(kwargs["adv_widths"])
        unknown = set(kwargs) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass
class Model:
    config: ModelConfig
    params: Dict[str, np.ndarray]

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def lstm_params(self) -> LstmParams:
        return LstmParams(self.params["lstm.wx"], self.params["lstm.wh"], self.params["lstm.b"])

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def build_model(config: ModelConfig, rng: Rng, dtype=np.float32) -> Model:
    """Initialize all parameters: truncated-normal weights (std 0.1), zero
    biases except the LSTM forget-gate bias, which starts at 1.0."""
    params: Dict[str, np.ndarray] = {}
    fan_in = config.input_dim
    for k, width in enumerate(config.trunk_widths):
        params[f"trunk{k}.w"] = truncated_normal_init((fan_in, width), WEIGHT_STD, rng, dtype)
        params[f"trunk{k}.b"] = np.zeros(width, dtype=dtype)
        fan_in = width
    units = config.lstm_units
    params["lstm.wx"] = truncated_normal_init((fan_in, 4 * units), WEIGHT_STD, rng, dtype)
    params["lstm.wh"] = truncated_normal_init((units, 4 * units), WEIGHT_STD, rng, dtype)
    lstm_b = np.zeros(4 * units, dtype=dtype)
    lstm_b[units : 2 * units] = 1.0
    params["lstm.b"] = lstm_b
    params["word.w"] = truncated_normal_init((units, config.word_classes), WEIGHT_STD, rng, dtype)
    params["word.b"] = np.zeros(config.word_classes, dtype=dtype)
    adv_in = config.trunk_widths[config.adv_attach_index - 1]
    for k, width in enumerate(config.adv_widths):
        params[f"adv{k}.w"] = truncated_normal_init((adv_in, width), WEIGHT_STD, rng, dtype)
        params[f"adv{k}.b"] = np.zeros(width, dtype=dtype)
        adv_in = width
    params["adv_out.w"] = truncated_normal_init((adv_in, config.adv_domains), WEIGHT_STD, rng, dtype)
    params["adv_out.b"] = np.zeros(config.adv_domains, dtype=dtype)
    return Model(config, params)


@dataclass
class SequenceCaches:
    trunk: list
    tap_activation_index: int
    lstm: object
    word: object
    adv: list


@dataclass
class SequenceOutput:
    """Forward results for one sequence: word logits from the final frame
    only, speaker logits for every frame (when requested), and the caches the
    backward pass consumes."""

    word_logits: np.ndarray  # [word_classes]
    speaker_logits: Optional[np.ndarray]  # [T, adv_domains] or None
    length: int
    caches: SequenceCaches = field(repr=False)


def forward_sequence(
    model: Model,
    frames: np.ndarray,
    training: bool,
    lam: float,
    rng: Optional[Rng] = None,
    need_speaker: bool = True,
) -> SequenceOutput:
    """Run one [T, H, W] sequence through the network.

    The trunk and the speaker head see every frame; the LSTM consumes the
    trunk outputs in time order and the word logits are read from the final
    frame only.  In training mode each frame draws an independent dropout
    mask.
    """
    cfg = model.config
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise ShapeError(f"expected a nonempty [T, H, W] sequence, got shape {frames.shape}")
    if frames.shape[1:] != (cfg.height, cfg.width):
        raise ShapeError(
            f"frame size {frames.shape[1:]} does not match configured {(cfg.height, cfg.width)}"
        )
    steps = frames.shape[0]
    dtype = model.params["trunk0.w"].dtype
    act = frames.reshape(steps, cfg.input_dim).astype(dtype, copy=False)

    trunk_caches = []
    tap = None
    for k in range(len(cfg.trunk_widths)):
        y, c_dense = layers.dense(act, model.params[f"trunk{k}.w"], model.params[f"trunk{k}.b"])
        y, c_tanh = layers.tanh_op(y)
        y, c_drop = layers.dropout(y, cfg.dropout_ratio, training, rng)
        trunk_caches.append((c_dense, c_tanh, c_drop))
        act = y
        if k + 1 == cfg.adv_attach_index:
            tap = act

    hs, lstm_cache = layers.lstm_forward(act, model.lstm_params())
    word_logits_row, word_cache = layers.dense(
        hs[steps - 1 : steps], model.params["word.w"], model.params["word.b"]
    )
    word_logits = word_logits_row[0]

    speaker_logits = None
    adv_caches: List = []
    if need_speaker:
        branch = layers.gradient_reversal(tap, lam)
        for k in range(len(cfg.adv_widths)):
            branch, c_dense = layers.dense(
                branch, model.params[f"adv{k}.w"], model.params[f"adv{k}.b"]
            )
            branch, c_tanh = layers.tanh_op(branch)
            adv_caches.append((c_dense, c_tanh))
        speaker_logits, adv_out_cache = layers.dense(
            branch, model.params["adv_out.w"], model.params["adv_out.b"]
        )
        adv_caches.append(adv_out_cache)

    caches = SequenceCaches(trunk_caches, cfg.adv_attach_index, lstm_cache, word_cache, adv_caches)
    return SequenceOutput(word_logits, speaker_logits, steps, caches)


def _backward_sequence(
    model: Model,
    out: SequenceOutput,
    dword: Optional[np.ndarray],
    dspeaker: Optional[np.ndarray],
    lam: float,
    grads: Dict[str, np.ndarray],
) -> None:
    """Accumulate one sequence's parameter gradients into ``grads``.

    Word gradients enter at the final frame only and flow back through time;
    speaker gradients enter at every frame and cross into the trunk inverted
    and scaled by ``lam``.
    """
    cfg = model.config
    steps = out.length
    caches = out.caches
    dtype = model.params["trunk0.w"].dtype

    # Word path: final-frame logits -> word head -> BPTT -> trunk output.
    if dword is not None:
        dh_last, dw, db = layers.dense_backward(dword[None, :].astype(dtype), caches.word)
        grads["word.w"] += dw
        grads["word.b"] += db
        dhs = np.zeros((steps, cfg.lstm_units), dtype=dtype)
        dhs[steps - 1] = dh_last[0]
        dtrunk, dwx, dwh, dbl = layers.lstm_backward(dhs, caches.lstm, model.lstm_params())
        grads["lstm.wx"] += dwx
        grads["lstm.wh"] += dwh
        grads["lstm.b"] += dbl
    else:
        dtrunk = np.zeros((steps, cfg.trunk_widths[-1]), dtype=dtype)

    # Speaker path: framewise logits -> head -> reversal at the tap point.
    dtap = None
    if dspeaker is not None:
        branch_grad = dspeaker.astype(dtype, copy=False)
        branch_grad, dw, db = layers.dense_backward(branch_grad, caches.adv[-1])
        grads["adv_out.w"] += dw
        grads["adv_out.b"] += db
        for k in range(len(cfg.adv_widths) - 1, -1, -1):
            c_dense, c_tanh = caches.adv[k]
            branch_grad = layers.tanh_backward(branch_grad, c_tanh)
            branch_grad, dw, db = layers.dense_backward(branch_grad, c_dense)
            grads[f"adv{k}.w"] += dw
            grads[f"adv{k}.b"] += db
        dtap = layers.gradient_reversal_backward(branch_grad, lam)

    g = dtrunk
    for k in range(len(cfg.trunk_widths) - 1, -1, -1):
        if dtap is not None and k + 1 == caches.tap_activation_index:
            g = g + dtap
        c_dense, c_tanh, c_drop = caches.trunk[k]
        g = layers.dropout_backward(g, c_drop)
        g = layers.tanh_backward(g, c_tanh)
        g, dw, db = layers.dense_backward(g, c_dense)
        grads[f"trunk{k}.w"] += dw
        grads[f"trunk{k}.b"] += db


def batch_losses(
    outputs: Sequence[SequenceOutput],
    word_labels: Sequence[Optional[int]],
    domain_ids: Sequence[int],
    class_weights: np.ndarray,
    include_speaker: bool = True,
):
    """Loss values only (no gradients); shares the loss definitions with
    backward_batch so finite-difference checks probe the same objective."""
    src = [k for k, lbl in enumerate(word_labels) if lbl is not None]
    logits = np.stack([outputs[k].word_logits for k in src])
    labels = np.array([word_labels[k] for k in src])
    weights = np.asarray(class_weights, dtype=np.float64)[labels]
    loss_word, _ = layers.weighted_softmax_ce(logits, labels, weights)
    loss_speaker = 0.0
    if include_speaker:
        frame_logits = np.concatenate([o.speaker_logits for o in outputs], axis=0)
        frame_domains = np.concatenate(
            [np.full(outputs[k].length, domain_ids[k]) for k in range(len(outputs))]
        )
        loss_speaker, _ = layers.weighted_softmax_ce(
            frame_logits, frame_domains, np.ones(len(frame_domains))
        )
    return loss_word, loss_speaker


def backward_batch(
    model: Model,
    outputs: Sequence[SequenceOutput],
    word_labels: Sequence[Optional[int]],
    domain_ids: Sequence[int],
    class_weights: np.ndarray,
    lam: float,
    include_speaker: bool = True,
):
    """Gradients for one augmented batch.

    Word-loss gradients flow only from labeled (source) sequences' final
    frames; when the speaker head is active, its framewise gradients flow
    from every sequence, inverted and scaled by ``lam`` where they enter the
    trunk, un-inverted into the head's own parameters.

    Returns (grads keyed by parameter name, word loss, speaker loss).
    """
    if len(outputs) != len(word_labels) or len(outputs) != len(domain_ids):
        raise ShapeError("outputs, word_labels, and domain_ids must align")
    src = [k for k, lbl in enumerate(word_labels) if lbl is not None]
    if not src:
        raise ConfigError("batch has no labeled source sequences")
    if include_speaker and len(src) == len(outputs):
        raise ConfigError("adversarial batch is missing its target half")
    if include_speaker and any(o.speaker_logits is None for o in outputs):
        raise ConfigError("adversarial backward needs speaker logits for every sequence")

    logits = np.stack([outputs[k].word_logits for k in src])
    labels = np.array([word_labels[k] for k in src])
    weights = np.asarray(class_weights, dtype=np.float64)[labels]
    loss_word, dlogits = layers.weighted_softmax_ce(logits, labels, weights)

    dspeaker_per_seq: List[Optional[np.ndarray]] = [None] * len(outputs)
    loss_speaker = 0.0
    if include_speaker:
        frame_logits = np.concatenate([o.speaker_logits for o in outputs], axis=0)
        frame_domains = np.concatenate(
            [np.full(outputs[k].length, domain_ids[k]) for k in range(len(outputs))]
        )
        loss_speaker, dframe = layers.weighted_softmax_ce(
            frame_logits, frame_domains, np.ones(len(frame_domains))
        )
        pos = 0
        for k, out in enumerate(outputs):
            dspeaker_per_seq[k] = dframe[pos : pos + out.length]
            pos += out.length

    grads = {name: np.zeros_like(p) for name, p in model.params.items()}
    word_grad_by_seq = {k: dlogits[row] for row, k in enumerate(src)}
    for k, out in enumerate(outputs):
        _backward_sequence(model, out, word_grad_by_seq.get(k), dspeaker_per_seq[k], lam, grads)
    return grads, loss_word, loss_speaker


def save_checkpoint(model: Model, path) -> None:
    """Checkpoint layout: magic, canonical-JSON config, then the named
    parameter tensors in sorted name order (binary tensor records)."""
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    cfg_bytes = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    blob.write(struct.pack("<I", len(cfg_bytes)))
    blob.write(cfg_bytes)
    names = sorted(model.params)
    blob.write(struct.pack("<I", len(names)))
    for name in names:
        raw = name.encode()
        blob.write(struct.pack("<H", len(raw)))
        blob.write(raw)
        write_tensor(blob, model.params[name])
    with open(path, "wb") as fh:
        fh.write(blob.getvalue())


def load_checkpoint(path) -> Model:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataIntegrityError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataIntegrityError(f"bad magic: expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        cfg = ModelConfig.from_dict(json.loads(fh.read(cfg_len).decode()))
        (count,) = struct.unpack("<I", fh.read(4))
        params: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            params[name] = read_tensor(fh)
    expected = sorted(build_param_shapes(cfg))
    if sorted(params) != expected:
        raise DataIntegrityError("checkpoint parameter names do not match its config")
    shapes = build_param_shapes(cfg)
    for name, arr in params.items():
        if tuple(arr.shape) != shapes[name]:
            raise DataIntegrityError(
                f"checkpoint tensor {name} has shape {arr.shape}, expected {shapes[name]}"
            )
    return Model(cfg, params)


def build_param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Expected shape of every named parameter for a config."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    fan_in = config.input_dim
    for k, width in enumerate(config.trunk_widths):
        shapes[f"trunk{k}.w"] = (fan_in, width)
        shapes[f"trunk{k}.b"] = (width,)
        fan_in = width
    units = config.lstm_units
    shapes["lstm.wx"] = (fan_in, 4 * units)
    shapes["lstm.wh"] = (units, 4 * units)
    shapes["lstm.b"] = (4 * units,)
    shapes["word.w"] = (units, config.word_classes)
    shapes["word.b"] = (config.word_classes,)
    adv_in = config.trunk_widths[config.adv_attach_index - 1]
    for k, width in enumerate(config.adv_widths):
        shapes[f"adv{k}.w"] = (adv_in, width)
        shapes[f"adv{k}.b"] = (width,)
        adv_in = width
    shapes["adv_out.w"] = (adv_in, config.adv_domains)
    shapes["adv_out.b"] = (config.adv_domains,)
    return shapes
