"""Last-frame word evaluation and per-class reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .model import Model, forward_sequence


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [C, C], rows true, cols predicted
    per_class_accuracy: Dict[int, float]
    n: int
    speaker_id: Optional[int] = None
    split: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n": self.n,
            "speaker_id": self.speaker_id,
            "split": self.split,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "confusion": self.confusion.tolist(),
        }


def predict_word(model: Model, frames: np.ndarray) -> int:
    """argmax of the final frame's word logits; ties go to the lowest index
    (argmax convention)."""
    out = forward_sequence(model, frames, training=False, lam=0.0, need_speaker=False)
    return int(np.argmax(out.word_logits))


def evaluate(
    model: Model,
    sequences: Sequence,
    speaker_id: Optional[int] = None,
    split: Optional[str] = None,
) -> EvalReport:
    """Inference-mode word accuracy over a labeled split.

    The prediction for a sequence is read from its last frame only; earlier
    frames' word logits never influence it.
    """
    if not sequences:
        raise ConfigError("cannot evaluate an empty split")
    classes = model.config.word_classes
    confusion = np.zeros((classes, classes), dtype=np.int64)
    for seq in sequences:
        if seq.word_label is None:
            raise ConfigError(f"sequence {seq.seq_id} is unlabeled; cannot score it")
        if not 0 <= seq.word_label < classes:
            raise ConfigError(f"label {seq.word_label} outside [0, {classes})")
        confusion[seq.word_label, predict_word(model, seq.frames)] += 1
    n = int(confusion.sum())
    per_class: Dict[int, float] = {}
    for c in range(classes):
        row = confusion[c].sum()
        if row:
            per_class[c] = float(confusion[c, c] / row)
    return EvalReport(
        accuracy=float(np.trace(confusion) / n),
        confusion=confusion,
        per_class_accuracy=per_class,
        n=n,
        speaker_id=speaker_id,
        split=split,
    )


def word_accuracy(model: Model, sequences: Sequence) -> float:
    right = 0
    for seq in sequences:
        if seq.word_label is None:
            raise ConfigError(f"sequence {seq.seq_id} is unlabeled; cannot score it")
        right += int(predict_word(model, seq.frames) == seq.word_label)
    if not sequences:
        raise ConfigError("cannot evaluate an empty split")
    return right / len(sequences)
