"""Grid experiment driver: trains baseline and adversarial systems over the
cyclic source-window -> target scheme and aggregates accuracies, relative
improvements, and paired significance."""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, normalize_per_speaker, strip_labels
from .errors import ConfigError
from .evaluate import evaluate
from .model import ModelConfig, build_model, save_checkpoint
from .stats import paired_t_test_one_tailed, relative_improvement
from .tensor import Rng, derive_seed
from .training import TrainConfig, TrainData, train

MODES = ("baseline", "adversarial")

GRID_CSV_HEADER = "mode,target,sources,tgt_test_acc,src_test_acc,best_epoch,epochs_run"


def grid_pairs(speaker_ids: Sequence[int], n_source: int) -> List[Tuple[Tuple[int, ...], int]]:
    """Cyclic consecutive windows: sources (s_i .. s_{i+n-1}), target
    s_{i+n}, wrapping around; every speaker is the target exactly once."""
    ids = sorted(speaker_ids)
    if n_source < 1:
        raise ConfigError(f"n_source must be >= 1, got {n_source}")
    if len(ids) < n_source + 1:
        raise ConfigError(
            f"need at least {n_source + 1} speakers for {n_source} sources, got {len(ids)}"
        )
    pairs = []
    m = len(ids)
    for i in range(m):
        sources = tuple(ids[(i + k) % m] for k in range(n_source))
        target = ids[(i + n_source) % m]
        pairs.append((sources, target))
    return pairs


@dataclass
class CellResult:
    mode: str
    target: int
    sources: Tuple[int, ...]
    tgt_test_acc: float
    src_test_acc: float
    best_epoch: int
    epochs_run: int
    tgt_report: Optional[dict] = None

    def csv_row(self) -> str:
        src = "+".join(str(s) for s in self.sources)
        return ",".join(
            [
                self.mode,
                str(self.target),
                src,
                f"{self.tgt_test_acc:.9g}",
                f"{self.src_test_acc:.9g}",
                str(self.best_epoch),
                str(self.epochs_run),
            ]
        )


def run_cell(
    dataset: Dataset,
    sources: Sequence[int],
    target: int,
    mode: str,
    model_config: ModelConfig,
    train_config: TrainConfig,
    cell_seed: int,
    out_dir: Optional[str] = None,
    normalized: bool = True,
) -> CellResult:
    """Train and score one grid cell.

    The cell seed drives model init, shuffling, dropout, and the target pool
    subsample; baseline and adversarial cells for the same target share it,
    so their comparison is paired from identical initial weights.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if target in sources:
        raise ConfigError(f"target speaker {target} is also a source")
    if not normalized:
        dataset = normalize_per_speaker(dataset)

    adv = mode == "adversarial"
    cfg = dataclasses.replace(
        model_config,
        height=dataset.height,
        width=dataset.width,
        adv_domains=len(sources) + 1,
    )
    model = build_model(cfg, Rng(cell_seed, "init"))
    tc = train_config.with_overrides(seed=cell_seed)

    source_train = [s for sid in sources for s in dataset.select(speaker_id=sid, split="train")]
    source_val = [s for sid in sources for s in dataset.select(speaker_id=sid, split="val")]
    source_test = [s for sid in sources for s in dataset.select(speaker_id=sid, split="test")]
    target_val = dataset.select(speaker_id=target, split="val")
    target_test = dataset.select(speaker_id=target, split="test")

    target_pool = None
    if adv:
        pool_seqs = dataset.select(speaker_id=target, split="train")
        if tc.target_pool_limit is not None and tc.target_pool_limit < len(pool_seqs):
            order = Rng(derive_seed(cell_seed, 1), "shuffle").permutation(len(pool_seqs))
            pool_seqs = [pool_seqs[i] for i in order[: tc.target_pool_limit]]
        target_pool, _counter = strip_labels(pool_seqs)

    result = train(
        model,
        TrainData(source_train, source_val, target_pool, target_val or None),
        tc,
    )
    tgt_report = evaluate(result.model, target_test, speaker_id=target, split="test")
    src_report = evaluate(result.model, source_test, split="test")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(result.model, os.path.join(out_dir, f"{mode}_t{target}.ckpt"))
        result.metrics.write_csv(os.path.join(out_dir, f"{mode}_t{target}_metrics.csv"))

    return CellResult(
        mode=mode,
        target=target,
        sources=tuple(sources),
        tgt_test_acc=tgt_report.accuracy,
        src_test_acc=src_report.accuracy,
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run,
        tgt_report=tgt_report.to_dict(),
    )


def _cell_worker(args) -> CellResult:
    return run_cell(*args)


@dataclass
class ExperimentResult:
    rows: List[CellResult]
    mean_tgt_acc: Dict[str, float]
    mean_src_acc: Dict[str, float]
    improvement_pct: Optional[float]
    t_stat: Optional[float]
    p_value: Optional[float]

    def grid_csv(self) -> str:
        ordered = sorted(self.rows, key=lambda r: (r.mode, r.target))
        return "\n".join([GRID_CSV_HEADER] + [r.csv_row() for r in ordered]) + "\n"

    def summary_dict(self) -> dict:
        return {
            "mean_tgt_acc": self.mean_tgt_acc,
            "mean_src_acc": self.mean_src_acc,
            "improvement_pct": self.improvement_pct,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
        }

    def summary_text(self) -> str:
        lines = []
        for mode in sorted(self.mean_tgt_acc):
            lines.append(
                f"{mode:12s} mean target acc {self.mean_tgt_acc[mode]:.4f}  "
                f"mean source acc {self.mean_src_acc[mode]:.4f}"
            )
        if self.improvement_pct is not None:
            lines.append(
                f"relative improvement {self.improvement_pct:+.1f}%  "
                f"paired one-tailed t={self.t_stat:.4f} p={self.p_value:.3g}"
            )
        return "\n".join(lines)


def run_experiment_grid(
    dataset: Dataset,
    n_source: int,
    modes: Sequence[str],
    model_config: ModelConfig,
    train_config: TrainConfig,
    base_seed: int = 0,
    out_dir: Optional[str] = None,
    workers: int = 1,
) -> ExperimentResult:
    """Train every (window, target) cell in every requested mode.

    Cells are independent; ``workers`` > 1 runs them in separate processes.
    Results are merged in (mode, target) order, so the output is identical
    regardless of worker count.
    """
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if not modes:
        raise ConfigError("no modes requested")
    dataset = normalize_per_speaker(dataset)
    pairs = grid_pairs(dataset.speakers(), n_source)

    jobs = []
    for mode in modes:
        for sources, target in pairs:
            cell_seed = derive_seed(base_seed, target)
            jobs.append((dataset, sources, target, mode, model_config, train_config,
                         cell_seed, out_dir, True))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_cell_worker, jobs))
    else:
        rows = [_cell_worker(j) for j in jobs]
    rows.sort(key=lambda r: (r.mode, r.target))

    mean_tgt = {m: float(np.mean([r.tgt_test_acc for r in rows if r.mode == m])) for m in modes}
    mean_src = {m: float(np.mean([r.src_test_acc for r in rows if r.mode == m])) for m in modes}

    improvement = t_stat = p_value = None
    if "baseline" in modes and "adversarial" in modes:
        base_by_target = {r.target: r.tgt_test_acc for r in rows if r.mode == "baseline"}
        adv_by_target = {r.target: r.tgt_test_acc for r in rows if r.mode == "adversarial"}
        targets = sorted(base_by_target)
        base_accs = [base_by_target[t] for t in targets]
        adv_accs = [adv_by_target[t] for t in targets]
        if mean_tgt["baseline"] > 0:
            improvement = relative_improvement(mean_tgt["baseline"], mean_tgt["adversarial"])
        if len(targets) >= 2:
            t_stat, p_value = paired_t_test_one_tailed(base_accs, adv_accs)

    result = ExperimentResult(rows, mean_tgt, mean_src, improvement, t_stat, p_value)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "grid.csv"), "w") as fh:
            fh.write(result.grid_csv())
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(result.summary_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    return result
