"""Dataset container, speaker split protocol, per-speaker normalization, the
target-label firewall, and directory-based dataset I/O."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AdvlipError, ConfigError, DataIntegrityError, ShapeError
from .tensor import Rng

FRAMES_MAGIC = b"LIPSEQD1"
VAL_PER_WORD = 5
TEST_PER_WORD = 5
STD_FLOOR = 1e-6
SPLITS = ("train", "val", "test")


@dataclass
class FrameSequence:
    """One word utterance: [T, H, W] float32 frames plus bookkeeping."""

    seq_id: int
    frames: np.ndarray
    word_label: Optional[int]
    speaker_id: int
    split: str = "train"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ShapeError(f"frames must be nonempty [T, H, W], got {self.frames.shape}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.word_label is not None and self.word_label < 0:
            raise ConfigError(f"word_label must be None or >= 0, got {self.word_label}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    height: int
    width: int
    sequences: List[FrameSequence] = field(default_factory=list)

    def __post_init__(self):
        for seq in self.sequences:
            if seq.frames.shape[1:] != (self.height, self.width):
                raise ShapeError(
                    f"sequence {seq.seq_id} frames {seq.frames.shape[1:]} do not match "
                    f"dataset size {(self.height, self.width)}"
                )

    def speakers(self) -> List[int]:
        return sorted({s.speaker_id for s in self.sequences})

    def word_classes(self) -> int:
        labels = [s.word_label for s in self.sequences if s.word_label is not None]
        return (max(labels) + 1) if labels else 0

    def select(self, speaker_id: Optional[int] = None, split: Optional[str] = None) -> List[FrameSequence]:
        out = []
        for s in self.sequences:
            if speaker_id is not None and s.speaker_id != speaker_id:
                continue
            if split is not None and s.split != split:
                continue
            out.append(s)
        return out


def split_speaker(
    sequences: Sequence[FrameSequence], rng: Rng
) -> Tuple[List[FrameSequence], List[FrameSequence], List[FrameSequence]]:
    """Assign one speaker's sequences to train/val/test.

    Exactly 5 validation and 5 test sequences per word, uniformly sampled;
    the remainder trains.  Words with fewer than 11 sequences are rejected.
    """
    by_word: Dict[int, List[int]] = {}
    for idx, seq in enumerate(sequences):
        if seq.word_label is None:
            raise ConfigError(f"sequence {seq.seq_id} has no word label; cannot split")
        by_word.setdefault(seq.word_label, []).append(idx)

    need = VAL_PER_WORD + TEST_PER_WORD + 1
    train: List[FrameSequence] = []
    val: List[FrameSequence] = []
    test: List[FrameSequence] = []
    for word in sorted(by_word):
        idxs = by_word[word]
        if len(idxs) < need:
            raise ConfigError(
                f"word {word} has {len(idxs)} sequences; need at least {need} to split"
            )
        order = rng.permutation(len(idxs))
        for rank, pos in enumerate(order):
            seq = sequences[idxs[pos]]
            if rank < VAL_PER_WORD:
                val.append(dataclasses.replace(seq, split="val"))
            elif rank < VAL_PER_WORD + TEST_PER_WORD:
                test.append(dataclasses.replace(seq, split="test"))
            else:
                train.append(dataclasses.replace(seq, split="train"))
    return train, val, test


@dataclass
class Normalizer:
    """Per-pixel z-normalization statistics fitted on one speaker's
    contrast-normalized training frames."""

    mean: np.ndarray  # [H, W]
    std: np.ndarray  # [H, W], floored at STD_FLOOR
    speaker_id: int


def contrast_normalize(frames: np.ndarray) -> np.ndarray:
    """Rescale each frame to [0, 1] by its own min/max; flat frames map to
    all zeros."""
    frames = np.asarray(frames, dtype=np.float32)
    lo = frames.min(axis=(1, 2), keepdims=True)
    hi = frames.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span <= 0
    safe_span = np.where(flat, 1.0, span)
    out = (frames - lo) / safe_span
    return np.where(flat, 0.0, out).astype(np.float32)


def fit_normalizer(train_sequences: Sequence[FrameSequence]) -> Normalizer:
    """Fit per-pixel statistics on a single speaker's training split only."""
    if not train_sequences:
        raise ConfigError("cannot fit a normalizer on an empty training split")
    speaker_ids = {s.speaker_id for s in train_sequences}
    if len(speaker_ids) != 1:
        raise ConfigError(f"normalizer must be fitted on one speaker, got {sorted(speaker_ids)}")
    bad = [s.seq_id for s in train_sequences if s.split != "train"]
    if bad:
        raise ConfigError(f"normalizer fitted on non-train sequences: {bad[:5]}")
    stacked = np.concatenate([contrast_normalize(s.frames) for s in train_sequences], axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return Normalizer(mean.astype(np.float32), std.astype(np.float32), speaker_ids.pop())


def apply_normalizer(norm: Normalizer, seq: FrameSequence) -> FrameSequence:
    frames = (contrast_normalize(seq.frames) - norm.mean) / norm.std
    return dataclasses.replace(seq, frames=frames.astype(np.float32))


def normalize_per_speaker(dataset: Dataset) -> Dataset:
    """Transform every sequence with a normalizer fitted on its own speaker's
    training split (the cross-speaker protocol: statistics never mix)."""
    out: List[FrameSequence] = []
    norms: Dict[int, Normalizer] = {}
    for sid in dataset.speakers():
        norms[sid] = fit_normalizer(dataset.select(speaker_id=sid, split="train"))
    for seq in dataset.sequences:
        out.append(apply_normalizer(norms[seq.speaker_id], seq))
    return Dataset(dataset.height, dataset.width, out)


class LabelFirewallError(AdvlipError):
    """A training component tried to read a firewalled target word label."""


class LabelReadCounter:
    """Shared instrumentation: counts attempted label reads on a target pool."""

    def __init__(self):
        self.reads = 0


class UnlabeledSequence:
    """Label-stripped training view of a target-speaker sequence.

    Frames and speaker id pass through; touching ``word_label`` both counts
    the read and raises, so no code path can train on it silently.
    """

    __slots__ = ("_seq", "_counter")

    def __init__(self, seq: FrameSequence, counter: LabelReadCounter):
        self._seq = seq
        self._counter = counter

    @property
    def seq_id(self) -> int:
        return self._seq.seq_id

    @property
    def frames(self) -> np.ndarray:
        return self._seq.frames

    @property
    def speaker_id(self) -> int:
        return self._seq.speaker_id

    @property
    def length(self) -> int:
        return self._seq.length

    @property
    def word_label(self):
        self._counter.reads += 1
        raise LabelFirewallError(
            f"word label of target sequence {self._seq.seq_id} is off-limits during training"
        )


def strip_labels(
    sequences: Sequence[FrameSequence],
) -> Tuple[List[UnlabeledSequence], LabelReadCounter]:
    counter = LabelReadCounter()
    return [UnlabeledSequence(s, counter) for s in sequences], counter


def write_dataset(dataset: Dataset, path) -> None:
    """Directory layout: manifest.json (header + per-sequence records with
    byte offsets) and frames.bin (magic, then raw little-endian float32
    frame blocks in manifest order)."""
    import os

    os.makedirs(path, exist_ok=True)
    records = []
    offset = len(FRAMES_MAGIC)
    with open(os.path.join(path, "frames.bin"), "wb") as fh:
        fh.write(FRAMES_MAGIC)
        for seq in dataset.sequences:
            block = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
            records.append(
                {
                    "id": seq.seq_id,
                    "speaker_id": seq.speaker_id,
                    "word_label": seq.word_label,
                    "split": seq.split,
                    "length": seq.length,
                    "offset": offset,
                }
            )
            fh.write(block)
            offset += len(block)
    manifest = {
        "height": dataset.height,
        "width": dataset.width,
        "norm": "per-pixel",
        "sequences": records,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_dataset(path) -> Dataset:
    import os

    manifest_path = os.path.join(path, "manifest.json")
    frames_path = os.path.join(path, "frames.bin")
    if not os.path.exists(manifest_path):
        raise DataIntegrityError(f"missing manifest.json in {path}")
    if not os.path.exists(frames_path):
        raise DataIntegrityError(f"missing frames.bin in {path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataIntegrityError(f"manifest.json is not valid JSON: {exc}") from exc
    for key in ("height", "width", "sequences"):
        if key not in manifest:
            raise DataIntegrityError(f"manifest.json missing field {key!r}")
    height, width = int(manifest["height"]), int(manifest["width"])

    blob = open(frames_path, "rb").read()
    if blob[: len(FRAMES_MAGIC)] != FRAMES_MAGIC:
        raise DataIntegrityError(
            f"bad magic in frames.bin: expected {FRAMES_MAGIC!r}, got {blob[:8]!r}"
        )
    frame_bytes = height * width * 4
    sequences = []
    for rec in manifest["sequences"]:
        length = int(rec["length"])
        offset = int(rec["offset"])
        end = offset + length * frame_bytes
        if offset < len(FRAMES_MAGIC) or end > len(blob):
            raise DataIntegrityError(
                f"sequence {rec['id']} block [{offset}, {end}) lies outside frames.bin "
                f"({len(blob)} bytes): truncated or inconsistent manifest"
            )
        frames = np.frombuffer(blob[offset:end], dtype="<f4").reshape(length, height, width)
        label = rec["word_label"]
        sequences.append(
            FrameSequence(
                seq_id=int(rec["id"]),
                frames=frames.copy(),
                word_label=None if label is None else int(label),
                speaker_id=int(rec["speaker_id"]),
                split=rec["split"],
            )
        )
    expected_end = len(FRAMES_MAGIC) + sum(s.length * frame_bytes for s in sequences)
    if sequences and expected_end != len(blob):
        raise DataIntegrityError(
            f"frames.bin holds {len(blob)} bytes but manifest accounts for {expected_end}"
        )
    return Dataset(height, width, sequences)


def dataset_hash(path) -> str:
    """SHA-256 over the manifest and frame blob, for run manifests."""
    import os

    digest = hashlib.sha256()
    for name in ("manifest.json", "frames.bin"):
        with open(os.path.join(path, name), "rb") as fh:
            digest.update(fh.read())
    return digest.hexdigest()
