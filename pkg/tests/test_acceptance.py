"""Release gate: twelve end-to-end criteria, one pass/fail line each.

Each test prints a single ``criterion NN PASS/FAIL`` line and then asserts,
so a verbose run reads as a checklist.  The adaptation-effect thresholds
(criteria 7 and 8) were calibrated once against the reference sweep of the
default synthetic corpus (median target gain +8.0 points, paired p = 0.0046;
pool-50 median +8.0) and are frozen here.
"""

import itertools
import json
import time

import numpy as np
import pytest

from advlip.cli import main
from advlip.data import (
    FrameSequence,
    UnlabeledSequence,
    normalize_per_speaker,
    strip_labels,
    write_dataset,
)
from advlip.evaluate import evaluate, predict_word
from advlip.gradcheck import run_all
from advlip.layers import gradient_reversal, gradient_reversal_backward
from advlip.model import ModelConfig, build_model
from advlip.stats import paired_t_test_one_tailed, student_t_cdf
from advlip.synth import SynthConfig, generate_synthetic
from advlip.tensor import Rng
from advlip.training import (
    TargetCycler,
    TrainConfig,
    TrainData,
    adversarial_weight,
    class_weights,
    train,
)
from conftest import small_model_config
from test_evaluate import CLASSES, last_frame_probe_model, one_hot_frame
from test_stats import CDF_TABLE, T_POINTS

# Frozen gate configuration.  The corpus is the generator's default (2
# domains, 5 classes, 60 sequences per class, "high" shift); the network is
# a narrow variant of the production architecture so that five paired runs
# finish well inside the 15-minute budget.
ACCEPT_MODEL = dict(
    height=20,
    width=20,
    trunk_widths=(64, 64, 64),
    dropout_ratio=0.0,
    lstm_units=64,
    word_classes=5,
    adv_widths=(64, 64),
    adv_domains=2,
)
ACCEPT_TRAIN = dict(
    patience=100,
    max_epochs=36,
    learning_rate=0.005,
    adv_epoch_interval=1,
    adv_step=1.0,
    adv_max=1.0,
)
SWEEP_SEEDS = range(5)
POOL_LIMIT = 50
MIN_MEDIAN_GAIN_POINTS = 5.0
MAX_PAIRED_P = 0.05
SWEEP_BUDGET_SECONDS = 900.0


def check(num, desc, cond):
    print(f"criterion {num:02d} {'PASS' if cond else 'FAIL'}: {desc}")
    assert cond, f"criterion {num} failed: {desc}"


@pytest.fixture(scope="module")
def sweep():
    """Train baseline, adversarial, and pool-50 adversarial models over five
    seeds of the default corpus; collect target-test accuracies plus the
    batch and label-firewall instrumentation the gate criteria inspect."""
    batch_shapes = set()
    batch_type_errors = []

    def hook(epoch, source_batch, target_batch, lam):
        batch_shapes.add((len(source_batch), len(target_batch)))
        if not all(isinstance(s, FrameSequence) for s in source_batch):
            batch_type_errors.append("source")
        if not all(isinstance(t, UnlabeledSequence) for t in target_batch):
            batch_type_errors.append("target")

    started = time.perf_counter()
    bases, advs, advs50, label_reads = [], [], [], []
    for seed in SWEEP_SEEDS:
        ds = normalize_per_speaker(generate_synthetic(SynthConfig(seed=seed)))
        src_train = ds.select(speaker_id=0, split="train")
        src_val = ds.select(speaker_id=0, split="val")
        tgt_train = ds.select(speaker_id=1, split="train")
        tgt_test = ds.select(speaker_id=1, split="test")
        config = TrainConfig(seed=seed, **ACCEPT_TRAIN)

        def run(pool, batch_hook=None):
            model = build_model(ModelConfig(**ACCEPT_MODEL), Rng(seed, "init"))
            result = train(
                model, TrainData(src_train, src_val, pool, None), config,
                batch_hook=batch_hook,
            )
            return evaluate(result.model, tgt_test).accuracy

        bases.append(run(None))
        pool, counter = strip_labels(tgt_train)
        advs.append(run(pool, hook))
        label_reads.append(counter.reads)

        order = Rng(seed + 7777, "shuffle").permutation(len(tgt_train))
        subset = [tgt_train[i] for i in order[:POOL_LIMIT]]
        pool50, counter50 = strip_labels(subset)
        advs50.append(run(pool50, hook))
        label_reads.append(counter50.reads)

    elapsed = time.perf_counter() - started
    for seed, b, a, a50 in zip(SWEEP_SEEDS, bases, advs, advs50):
        print(f"seed {seed}: base={b:.2f} adv={a:.2f} adv50={a50:.2f}")
    return dict(
        bases=np.array(bases),
        advs=np.array(advs),
        advs50=np.array(advs50),
        label_reads=label_reads,
        batch_shapes=batch_shapes,
        batch_type_errors=batch_type_errors,
        elapsed=elapsed,
    )


def test_criterion_01_gradient_fidelity():
    started = time.perf_counter()
    rows = run_all(seeds=range(10))
    elapsed = time.perf_counter() - started
    worst = max(row.rel_err for row in rows)
    check(
        1,
        f"max finite-difference rel err {worst:.2e} < 1e-4 "
        f"over {len(rows)} checks in {elapsed:.1f}s (< 30s)",
        all(row.passed for row in rows) and elapsed < 30.0,
    )


def test_criterion_02_gradient_reversal_contract():
    rng = Rng(5, "init")
    x = rng.normal((6, 4))
    dy = rng.normal((6, 4))
    ok = True
    for lam in (0.0, 0.2, 1.0):
        ok = ok and gradient_reversal(x, lam) is x
        ok = ok and np.array_equal(gradient_reversal_backward(dy, lam), (-lam) * dy)
    check(2, "reversal is bit-exact identity forward, exactly -lam * dy backward", ok)


def test_criterion_03_schedule_table():
    config = TrainConfig()
    table = {0: 0.0, 9: 0.0, 10: 0.2, 20: 0.4, 30: 0.6, 40: 0.8, 50: 1.0, 200: 1.0}
    ok = all(adversarial_weight(epoch, config) == value for epoch, value in table.items())
    check(3, "staircase weight matches the reference table exactly", ok)


def test_criterion_04_inverse_frequency_weights():
    # 25 letter classes seen 30 times each, 4 color classes seen 240 times
    labels = [c for c in range(25) for _ in range(30)]
    labels += [c for c in range(25, 29) for _ in range(240)]
    weights = class_weights(labels, 29)
    counts = np.bincount(np.asarray(labels), minlength=29)
    masses = weights * counts
    ok = weights[0] / weights[25] == 8.0 and np.unique(masses).size == 1
    check(4, "letter:color weight ratio exactly 8:1 and class masses equal", ok)


def test_criterion_05_batch_contract(sweep):
    shapes_ok = sweep["batch_shapes"] == {(8, 8)} and not sweep["batch_type_errors"]
    # usage accounting at production scale: 50-sequence pool, 5490 source
    # sequences -> 686 full batches of 8 target draws per epoch
    cycler = TargetCycler(list(range(50)), Rng(123, "shuffle"))
    for _ in range(5490 // 8):
        cycler.draw(8)
    counts = cycler.usage_counts
    counting_ok = (
        int(counts.sum()) == (5490 // 8) * 8
        and counts.min() >= 108
        and counts.max() <= 112
    )
    check(
        5,
        f"every batch 8 labeled + 8 stripped; pool-50 usage "
        f"{counts.min()}..{counts.max()} within 108..112",
        shapes_ok and counting_ok,
    )


def test_criterion_06_target_label_firewall(sweep):
    reads = sweep["label_reads"]
    check(
        6,
        f"zero target-label reads across {len(reads)} adversarial runs",
        all(r == 0 for r in reads),
    )


def test_criterion_07_synthetic_adaptation_effect(sweep):
    gains = 100.0 * (sweep["advs"] - sweep["bases"])
    median_gain = float(np.median(gains))
    _, p = paired_t_test_one_tailed(sweep["bases"], sweep["advs"])
    check(
        7,
        f"median target gain {median_gain:+.1f} pts >= {MIN_MEDIAN_GAIN_POINTS}, "
        f"paired p {p:.4f} < {MAX_PAIRED_P}, sweep {sweep['elapsed']:.0f}s < "
        f"{SWEEP_BUDGET_SECONDS:.0f}s",
        median_gain >= MIN_MEDIAN_GAIN_POINTS
        and p < MAX_PAIRED_P
        and sweep["elapsed"] < SWEEP_BUDGET_SECONDS,
    )


def test_criterion_08_reduced_pool_robustness(sweep):
    gains = 100.0 * (sweep["advs50"] - sweep["bases"])
    median_gain = float(np.median(gains))
    check(8, f"pool-50 median target gain {median_gain:+.1f} pts > 0", median_gain > 0.0)


def test_criterion_09_t_test_correctness():
    t, p = paired_t_test_one_tailed(np.zeros(5), np.arange(1.0, 6.0))
    point_ok = abs(t - 4.2426) < 1e-4 and abs(p - 0.00662) < 1e-4
    same = np.arange(1.0, 6.0)
    tie_ok = paired_t_test_one_tailed(same, same) == (0.0, 0.5)
    worst = max(
        abs(student_t_cdf(point, df) - ref)
        for df, column in CDF_TABLE.items()
        for point, ref in zip(T_POINTS, column)
    )
    check(
        9,
        f"t=4.2426/p=0.00662 within 1e-4, tie p exactly 0.5, "
        f"CDF max err {worst:.1e} < 1e-8",
        point_ok and tie_ok and worst < 1e-8,
    )


def test_criterion_10_byte_identical_reruns(tmp_path):
    data_dir = tmp_path / "data"
    write_dataset(generate_synthetic(SynthConfig(seed=0)), data_dir)
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps(ModelConfig(**ACCEPT_MODEL).to_dict()))
    train_path = tmp_path / "train.json"
    train_path.write_text(
        json.dumps(TrainConfig(seed=3, **dict(ACCEPT_TRAIN, max_epochs=8)).to_dict())
    )
    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        code = main(
            [
                "train",
                "--data", str(data_dir),
                "--out", str(out),
                "--sources", "0",
                "--target", "1",
                "--mode", "adversarial",
                "--model-config", str(model_path),
                "--config", str(train_path),
            ]
        )
        assert code == 0
        outs.append(out)
    same_csv = (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()
    same_ckpt = (outs[0] / "model.ckpt").read_bytes() == (outs[1] / "model.ckpt").read_bytes()
    check(10, "same-seed train reruns are byte-identical (metrics and checkpoint)", same_csv and same_ckpt)


def test_criterion_11_last_frame_semantics():
    model = last_frame_probe_model()
    ok = all(
        predict_word(model, np.stack([one_hot_frame(c) for c in history])) == history[-1]
        for history in itertools.product(range(CLASSES), repeat=3)
    )
    check(11, "frame-dependent probe model is classified by its final frame alone", ok)


def test_criterion_12_early_stopping_contract(small_dataset, monkeypatch):
    # validation trace: improvements at epochs 0 and 1, then ties and
    # declines only; with patience 3 the run must stop after epoch 5
    trace = [0.2, 0.6, 0.6, 0.5, 0.6] + [0.1] * 50
    calls = []

    def scripted(model, sequences):
        value = trace[len(calls)]
        calls.append(value)
        return value

    monkeypatch.setattr("advlip.training.word_accuracy", scripted)
    model = build_model(small_model_config(), Rng(0, "init"))
    snapshots = {}

    def hook(epoch, source_batch, target_batch, lam):
        if epoch not in snapshots:
            snapshots[epoch] = model.copy_params()

    data = TrainData(
        small_dataset.select(speaker_id=0, split="train"),
        small_dataset.select(speaker_id=0, split="val"),
        None,
        None,
    )
    config = TrainConfig(learning_rate=0.001, patience=3, max_epochs=40, seed=0)
    result = train(model, data, config, batch_hook=hook)

    best, patience = 1, config.patience
    stop_ok = (
        result.best_epoch == best
        and result.epochs_run == best + patience + 2
        and len(result.metrics.rows) == result.epochs_run
    )
    # params captured at the start of epoch best+1 are exactly the state the
    # best checkpoint must restore
    reference = snapshots[best + 1]
    restored_ok = all(
        np.array_equal(result.model.params[k], reference[k]) for k in reference
    )
    check(
        12,
        f"stopped {result.epochs_run - 1 - best} epochs after the last "
        f"improvement (= patience+1) and restored the best checkpoint",
        stop_ok and restored_ok,
    )
