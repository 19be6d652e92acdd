"""Low-resource transfer comparison across sharing architectures.

For each (target size, seed, architecture) the target task's training set is
downsampled, a model is assembled and trained jointly with the full auxiliary
corpora, and target-task test accuracy is recorded. The independent baseline
trains on the downsampled target data alone. Aggregation is a pure function
of the per-run records, so a report can be regenerated bit-identically from
a saved run log.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from .data import Example, build_vocab
from .multitask import ArchKind, TaskSpec, assemble, route_batch
from .training import TrainConfig, evaluate, train

DOWNSAMPLE_SEED_BASE = 1000  # offset so run seeds and subset seeds never collide


@dataclass(frozen=True)
class RunRecord:
    arch: str
    target_task: str
    target_size: int
    seed: int
    exact_match: float
    token_accuracy: float
    oov_copy_success: float
    test_size: int
    steps: int
    train_seconds: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def downsample(examples: list[Example], k: int, seed: int) -> list[Example]:
    """First k of a seeded shuffle; the same (k, seed) always picks the same
    subset regardless of architecture."""
    if k > len(examples):
        raise ValueError(f"downsample: asked for {k} of {len(examples)}")
    rng = np.random.default_rng(DOWNSAMPLE_SEED_BASE + seed)
    idx = rng.permutation(len(examples))[:k]
    return [examples[i] for i in sorted(idx)]


def vocabs_for(train_sets: dict[str, list[Example]]):
    """Input vocabulary over all tasks' training utterances plus one decoder
    vocabulary per task, the same wiring whichever module builds the model."""
    all_examples = [e for v in train_sets.values() for e in v]
    input_vocab = build_vocab(all_examples, side="utterance")
    decoder_vocabs = {t: build_vocab(v, side="logical_form")
                      for t, v in train_sets.items()}
    return input_vocab, decoder_vocabs


def run_one(arch: ArchKind, corpora: dict[str, dict[str, list[Example]]],
            target_task: str, target_size: int, seed: int,
            base_config: TrainConfig, log_fn=None) -> RunRecord:
    """Train one architecture at one target size and score the target test set."""
    if target_task not in corpora:
        raise ValueError(f"unknown target task {target_task!r}")
    target_train = downsample(corpora[target_task]["train"], target_size, seed)

    if arch is ArchKind.INDEPENDENT:
        train_sets = {target_task: target_train}
    else:
        train_sets = {t: (target_train if t == target_task else v["train"])
                      for t, v in corpora.items()}

    input_vocab, decoder_vocabs = vocabs_for(train_sets)
    tasks = [TaskSpec(t, decoder_vocabs[t]) for t in train_sets]
    if arch is ArchKind.ONE_TO_ONE:
        for t in tasks:
            input_vocab.add(t.artificial_token)

    cfg = dataclasses.replace(base_config, seed=seed)
    asm = assemble(arch, tasks, cfg.dims, input_vocab, seed=seed)
    t0 = time.perf_counter()
    result = train(asm, train_sets, cfg, log_fn=log_fn)
    seconds = time.perf_counter() - t0
    report = evaluate(route_batch(asm, target_task), corpora[target_task]["test"])
    return RunRecord(
        arch=arch.value, target_task=target_task, target_size=target_size,
        seed=seed, exact_match=report.exact_match,
        token_accuracy=report.token_accuracy,
        oov_copy_success=report.oov_copy_success,
        test_size=report.n_examples, steps=result.steps,
        train_seconds=round(seconds, 3))


def run_transfer_experiment(corpora, target_task: str, target_sizes, seeds,
                            base_config: TrainConfig,
                            archs: tuple[ArchKind, ...] = tuple(ArchKind),
                            runs_path=None, log_fn=None) -> list[RunRecord]:
    """Full grid of runs; appends one JSON line per run to runs_path if given."""
    if ArchKind.INDEPENDENT not in archs:
        raise ValueError("the independent baseline is required for deltas")
    records = []
    for size in target_sizes:
        for seed in seeds:
            for arch in archs:
                rec = run_one(arch, corpora, target_task, size, seed,
                              base_config, log_fn=log_fn)
                records.append(rec)
                if log_fn is not None:
                    log_fn(f"run {rec.to_json()}")
                if runs_path is not None:
                    with open(runs_path, "a", encoding="utf-8") as fh:
                        fh.write(rec.to_json() + "\n")
    return records


def load_runs(path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


def _mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def summarize(records: list[RunRecord]) -> dict:
    """Mean and sd of target exact match per (size, arch), plus the delta of
    each architecture against the independent baseline at the same size."""
    if not records:
        raise ValueError("summarize: no run records")
    sizes = sorted({r.target_size for r in records})
    archs = [k.value for k in ArchKind
             if any(r.arch == k.value for r in records)]
    cells = {}
    for size in sizes:
        for arch in archs:
            ems = [r.exact_match for r in records
                   if r.target_size == size and r.arch == arch]
            if not ems:
                continue
            mean, sd = _mean_sd(ems)
            cells[(size, arch)] = {"mean": mean, "sd": sd, "n": len(ems)}
    for (size, arch), cell in cells.items():
        base = cells.get((size, ArchKind.INDEPENDENT.value))
        if base is not None and arch != ArchKind.INDEPENDENT.value:
            cell["delta"] = cell["mean"] - base["mean"]
    return {
        "target_task": records[0].target_task,
        "test_size": records[0].test_size,
        "seeds": sorted({r.seed for r in records}),
        "sizes": sizes,
        "cells": {f"{size}/{arch}": cell for (size, arch), cell in cells.items()},
    }


def format_report(summary: dict) -> str:
    """Plain-text table: architectures x target sizes, gains over the baseline."""
    lines = [
        f"target task: {summary['target_task']}   "
        f"test n={summary['test_size']}   "
        f"seeds: {', '.join(str(s) for s in summary['seeds'])}",
        f"{'size':>6}  {'architecture':<15} {'exact_match':>11}  "
        f"{'sd':>7}  {'vs independent':>14}",
    ]
    for size in summary["sizes"]:
        for arch in [k.value for k in ArchKind]:
            cell = summary["cells"].get(f"{size}/{arch}")
            if cell is None:
                continue
            delta = ("" if "delta" not in cell
                     else f"{cell['delta']:+14.4f}")
            lines.append(f"{size:>6}  {arch:<15} {cell['mean']:>11.4f}  "
                         f"{cell['sd']:>7.4f}  {delta:>14}")
    return "\n".join(lines)
