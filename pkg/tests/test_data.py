import json

import numpy as np
import pytest

from advlip import data as dmod
from advlip.data import (
    STD_FLOOR,
    Dataset,
    FrameSequence,
    LabelFirewallError,
    contrast_normalize,
    dataset_hash,
    fit_normalizer,
    normalize_per_speaker,
    read_dataset,
    split_speaker,
    strip_labels,
    write_dataset,
)
from advlip.errors import ConfigError, DataIntegrityError, ShapeError
from advlip.tensor import Rng

from conftest import random_labeled_sequences


def seq(seq_id=0, t=3, h=4, w=4, label=0, speaker=0, split="train", fill=None):
    frames = np.zeros((t, h, w), dtype=np.float32)
    if fill is not None:
        frames += fill
    else:
        frames += np.arange(t * h * w, dtype=np.float32).reshape(t, h, w)
    return FrameSequence(seq_id, frames, label, speaker, split)


def test_frame_sequence_validation():
    with pytest.raises(ShapeError):
        FrameSequence(0, np.zeros((4, 4)), 0, 0)
    with pytest.raises(ShapeError):
        FrameSequence(0, np.zeros((0, 4, 4)), 0, 0)
    with pytest.raises(ConfigError):
        FrameSequence(0, np.zeros((1, 4, 4)), 0, 0, split="dev")
    with pytest.raises(ConfigError):
        FrameSequence(0, np.zeros((1, 4, 4)), -1, 0)
    ok = FrameSequence(0, np.zeros((2, 4, 4)), None, 3, "test")
    assert ok.word_label is None and ok.length == 2
    assert ok.frames.dtype == np.float32


def test_dataset_rejects_mismatched_frames():
    with pytest.raises(ShapeError):
        Dataset(4, 4, [seq(h=4, w=5)])


def test_dataset_accessors():
    ds = Dataset(
        4,
        4,
        [
            seq(0, label=1, speaker=0),
            seq(1, label=0, speaker=2, split="val"),
            seq(2, label=None, speaker=0),
        ],
    )
    assert ds.speakers() == [0, 2]
    assert ds.word_classes() == 2
    assert [s.seq_id for s in ds.select(speaker_id=0)] == [0, 2]
    assert [s.seq_id for s in ds.select(split="val")] == [1]
    assert [s.seq_id for s in ds.select(speaker_id=0, split="train")] == [0, 2]


def test_split_speaker_counts_and_coverage():
    seqs = random_labeled_sequences(26, classes=2, height=4, width=4, seed=0)
    train, val, test = split_speaker(seqs, Rng(0, "shuffle"))
    assert len(val) == 10 and len(test) == 10 and len(train) == 6
    for part, name in ((train, "train"), (val, "val"), (test, "test")):
        assert all(s.split == name for s in part)
        for label in (0, 1):
            expect = {"train": 3, "val": 5, "test": 5}[name]
            assert sum(1 for s in part if s.word_label == label) == expect
    ids = sorted(s.seq_id for s in train + val + test)
    assert ids == sorted(s.seq_id for s in seqs)


def test_split_speaker_boundary_and_rejects():
    base = random_labeled_sequences(11, classes=1, height=4, width=4, seed=1)
    train, val, test = split_speaker(base, Rng(0, "shuffle"))
    assert (len(train), len(val), len(test)) == (1, 5, 5)
    with pytest.raises(ConfigError):
        split_speaker(base[:10], Rng(0, "shuffle"))
    unlabeled = [FrameSequence(99, np.zeros((2, 4, 4)), None, 0)]
    with pytest.raises(ConfigError):
        split_speaker(base + unlabeled, Rng(0, "shuffle"))


def test_split_speaker_deterministic():
    seqs = random_labeled_sequences(30, classes=2, height=4, width=4, seed=2)
    a = split_speaker(seqs, Rng(5, "shuffle"))
    b = split_speaker(seqs, Rng(5, "shuffle"))
    for pa, pb in zip(a, b):
        assert [s.seq_id for s in pa] == [s.seq_id for s in pb]
    c = split_speaker(seqs, Rng(6, "shuffle"))
    assert any(
        [s.seq_id for s in pa] != [s.seq_id for s in pc] for pa, pc in zip(a, c)
    )


def test_contrast_normalize_range_and_flat_frames():
    frames = np.stack(
        [
            np.linspace(-3.0, 5.0, 16).reshape(4, 4),
            np.full((4, 4), 7.0),
        ]
    ).astype(np.float32)
    out = contrast_normalize(frames)
    assert out.dtype == np.float32
    assert out[0].min() == 0.0 and out[0].max() == 1.0
    assert np.all(out[1] == 0.0)


def test_fit_normalizer_matches_manual_statistics():
    seqs = random_labeled_sequences(4, classes=2, height=3, width=3, seed=3)
    norm = fit_normalizer(seqs)
    stacked = np.concatenate([contrast_normalize(s.frames) for s in seqs], axis=0)
    assert np.allclose(norm.mean, stacked.mean(axis=0), atol=1e-7)
    assert np.allclose(norm.std, np.maximum(stacked.std(axis=0), STD_FLOOR), atol=1e-7)
    assert norm.speaker_id == 0


def test_fit_normalizer_floors_std():
    flat = [FrameSequence(i, np.full((2, 3, 3), 1.0), 0, 0) for i in range(3)]
    norm = fit_normalizer(flat)
    assert np.all(norm.std >= STD_FLOOR)


def test_fit_normalizer_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        fit_normalizer([])
    mixed = [seq(0, speaker=0), seq(1, speaker=1)]
    with pytest.raises(ConfigError):
        fit_normalizer(mixed)
    with pytest.raises(ConfigError):
        fit_normalizer([seq(0, split="val")])


def test_normalize_per_speaker_standardizes_train_frames():
    seqs = []
    k = 0
    for speaker in (0, 1):
        for label in (0, 1):
            for _ in range(13):
                rng = Rng(1000 + k, "synth")
                frames = rng.normal((3, 4, 4), std=1.0) + speaker * 3.0
                seqs.append(FrameSequence(k, frames, label, speaker))
                k += 1
    ds = Dataset(4, 4, seqs)
    split_all = []
    for sid in ds.speakers():
        tr, va, te = split_speaker(ds.select(speaker_id=sid), Rng(sid, "shuffle"))
        split_all += tr + va + te
    normed = normalize_per_speaker(Dataset(4, 4, split_all))
    for sid in (0, 1):
        train_frames = np.concatenate(
            [s.frames for s in normed.select(speaker_id=sid, split="train")], axis=0
        )
        assert abs(train_frames.mean()) < 1e-5
        assert abs(train_frames.std() - 1.0) < 0.05


def test_label_firewall_counts_and_raises():
    views, counter = strip_labels([seq(7, label=2, speaker=4)])
    view = views[0]
    assert view.seq_id == 7
    assert view.speaker_id == 4
    assert view.length == 3
    assert np.array_equal(view.frames, seq(7, label=2, speaker=4).frames)
    assert counter.reads == 0
    for expected in (1, 2):
        with pytest.raises(LabelFirewallError):
            view.word_label
        assert counter.reads == expected


def test_strip_labels_shares_one_counter():
    views, counter = strip_labels([seq(0), seq(1)])
    for v in views:
        with pytest.raises(LabelFirewallError):
            v.word_label
    assert counter.reads == 2


def test_dataset_io_roundtrip(tmp_path):
    seqs = [
        seq(0, t=2, label=1, speaker=0, split="train"),
        seq(1, t=4, label=None, speaker=1, split="val"),
        seq(2, t=3, label=0, speaker=2, split="test", fill=-1.5),
    ]
    ds = Dataset(4, 4, seqs)
    out = tmp_path / "ds"
    write_dataset(ds, out)
    back = read_dataset(out)
    assert (back.height, back.width) == (4, 4)
    assert len(back.sequences) == 3
    for a, b in zip(seqs, back.sequences):
        assert (a.seq_id, a.word_label, a.speaker_id, a.split) == (
            b.seq_id,
            b.word_label,
            b.speaker_id,
            b.split,
        )
        assert a.frames.tobytes() == b.frames.tobytes()


def test_dataset_hash_stable_and_sensitive(tmp_path):
    ds = Dataset(4, 4, [seq(0), seq(1, fill=2.0)])
    a_dir, b_dir, c_dir = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    write_dataset(ds, a_dir)
    write_dataset(ds, b_dir)
    assert dataset_hash(a_dir) == dataset_hash(b_dir)
    write_dataset(Dataset(4, 4, [seq(0), seq(1, fill=2.5)]), c_dir)
    assert dataset_hash(a_dir) != dataset_hash(c_dir)


def _written(tmp_path):
    out = tmp_path / "ds"
    write_dataset(Dataset(4, 4, [seq(0), seq(1)]), out)
    return out


def test_read_rejects_missing_manifest(tmp_path):
    out = _written(tmp_path)
    (out / "manifest.json").unlink()
    with pytest.raises(DataIntegrityError):
        read_dataset(out)


def test_read_rejects_bad_magic(tmp_path):
    out = _written(tmp_path)
    blob = (out / "frames.bin").read_bytes()
    (out / "frames.bin").write_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(DataIntegrityError):
        read_dataset(out)


def test_read_rejects_truncated_frames(tmp_path):
    out = _written(tmp_path)
    blob = (out / "frames.bin").read_bytes()
    (out / "frames.bin").write_bytes(blob[:-8])
    with pytest.raises(DataIntegrityError):
        read_dataset(out)


def test_read_rejects_invalid_json(tmp_path):
    out = _written(tmp_path)
    (out / "manifest.json").write_text("{not json")
    with pytest.raises(DataIntegrityError):
        read_dataset(out)


def test_read_rejects_missing_manifest_field(tmp_path):
    out = _written(tmp_path)
    manifest = json.loads((out / "manifest.json").read_text())
    del manifest["height"]
    (out / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DataIntegrityError):
        read_dataset(out)


def test_read_rejects_trailing_bytes(tmp_path):
    out = _written(tmp_path)
    with open(out / "frames.bin", "ab") as fh:
        fh.write(b"\x00" * 16)
    with pytest.raises(DataIntegrityError):
        read_dataset(out)
