import numpy as np
import pytest

from advlip.data import Dataset, FrameSequence, normalize_per_speaker
from advlip.model import ModelConfig
from advlip.synth import SynthConfig, generate_synthetic
from advlip.tensor import Rng


def small_synth_config(seed=0, **overrides):
    """Small, quick-to-learn corpus for training-loop tests: gentler noise
    and jitter than the full-size defaults so a few epochs suffice."""
    fields = dict(
        n_domains=2,
        n_classes=3,
        seqs_per_class=15,
        t_min=3,
        t_max=5,
        height=12,
        width=12,
        blob_radius=2.0,
        base_noise=0.05,
        angle_jitter=0.1,
        start_jitter=0.5,
        cue_amp=0.3,
        seed=seed,
    )
    fields.update(overrides)
    return SynthConfig.for_shift_level("low", **fields)


def small_model_config(**overrides):
    fields = dict(
        height=12,
        width=12,
        trunk_widths=(16, 16, 16),
        dropout_ratio=0.0,
        lstm_units=16,
        word_classes=3,
        adv_widths=(12, 12),
        adv_domains=2,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def random_labeled_sequences(n, classes, height, width, seed, speaker_id=0):
    rng = Rng(seed, "synth")
    seqs = []
    for k in range(n):
        steps = int(rng.integers(3, 6))
        frames = rng.normal((steps, height, width)).astype(np.float32)
        seqs.append(
            FrameSequence(
                seq_id=k,
                frames=frames,
                word_label=k % classes,
                speaker_id=speaker_id,
            )
        )
    return seqs


@pytest.fixture(scope="session")
def small_dataset():
    """Normalized two-speaker corpus shared by the training-level tests."""
    return normalize_per_speaker(generate_synthetic(small_synth_config()))


@pytest.fixture(scope="session")
def raw_small_dataset():
    return generate_synthetic(small_synth_config())


@pytest.fixture()
def tiny_dataset_dir(tmp_path, raw_small_dataset):
    from advlip.data import write_dataset

    path = tmp_path / "data"
    write_dataset(raw_small_dataset, path)
    return str(path)
