"""Downsampling, run records, aggregation, report regeneration."""

import json
import math

import numpy as np
import pytest

from multiparse.data import Example
from multiparse.experiment import (RunRecord, downsample, format_report,
                                   load_runs, run_one, run_transfer_experiment,
                                   summarize)
from multiparse.model import Dims
from multiparse.multitask import ArchKind
from multiparse.training import TrainConfig


def examples(task, n):
    pool = [("red", "fox", "runs", "run"), ("blue", "fox", "sits", "sit"),
            ("red", "cat", "naps", "nap"), ("blue", "cat", "runs", "run"),
            ("red", "fox", "sits", "sit"), ("blue", "cat", "naps", "nap")]
    out = []
    for i in range(n):
        a, b, c, v = pool[i % len(pool)]
        form = ("(", v, b, ")") if task == "a" else (v, ":", b)
        out.append(Example(task, (a, b, c), form, i + 1))
    return out


def tiny_corpora():
    return {"a": {"train": examples("a", 6), "test": examples("a", 2)},
            "b": {"train": examples("b", 6), "test": examples("b", 2)}}


def tiny_config(**kw):
    base = dict(epochs=1, lr=0.5, lr_halve_after_epoch=1, batch_size=1,
                dropout=0.0, seed=0, dims=Dims(embed=8, hidden=8, attn=8, layers=1))
    base.update(kw)
    return TrainConfig(**base)


class TestDownsample:
    def test_same_arguments_same_subset(self):
        pool = examples("a", 20)
        assert downsample(pool, 5, seed=3) == downsample(pool, 5, seed=3)

    def test_different_seed_different_subset(self):
        pool = examples("a", 20)
        assert downsample(pool, 5, seed=3) != downsample(pool, 5, seed=4)

    def test_preserves_corpus_order_within_subset(self):
        pool = examples("a", 20)
        picked = downsample(pool, 8, seed=1)
        ids = [e.example_id for e in picked]
        assert ids == sorted(ids)

    def test_full_size_is_a_permutation_identity(self):
        pool = examples("a", 6)
        assert downsample(pool, 6, seed=0) == pool

    def test_oversized_request_rejected(self):
        with pytest.raises(ValueError, match="downsample"):
            downsample(examples("a", 3), 4, seed=0)


class TestRunRecord:
    record = RunRecord(arch="one2many", target_task="a", target_size=10,
                       seed=2, exact_match=0.5, token_accuracy=0.75,
                       oov_copy_success=1.0, test_size=2, steps=12,
                       train_seconds=0.25)

    def test_json_roundtrip(self):
        assert RunRecord.from_json(self.record.to_json()) == self.record

    def test_json_keys_sorted_for_stable_lines(self):
        keys = list(json.loads(self.record.to_json()))
        assert keys == sorted(keys)


class TestRunOne:
    def test_independent_trains_on_target_only(self):
        corpora = tiny_corpora()
        cfg = tiny_config()
        solo = run_one(ArchKind.INDEPENDENT, corpora, "a", 4, seed=1, base_config=cfg)
        joint = run_one(ArchKind.ONE_TO_SHARE_MANY, corpora, "a", 4, seed=1,
                        base_config=cfg)
        # steps per epoch count all training examples the architecture sees:
        # 4 downsampled for the baseline, 4 + 6 auxiliary for the shared model
        assert solo.steps == math.ceil(4 / cfg.batch_size)
        assert joint.steps == math.ceil(10 / cfg.batch_size)
        assert solo.test_size == 2

    def test_unknown_target_rejected(self):
        with pytest.raises(ValueError, match="unknown target task"):
            run_one(ArchKind.INDEPENDENT, tiny_corpora(), "zzz", 2, seed=0,
                    base_config=tiny_config())

    def test_record_fields_describe_the_run(self):
        rec = run_one(ArchKind.ONE_TO_ONE, tiny_corpora(), "a", 3, seed=5,
                      base_config=tiny_config())
        assert rec.arch == "one2one"
        assert (rec.target_task, rec.target_size, rec.seed) == ("a", 3, 5)
        assert 0.0 <= rec.exact_match <= 1.0
        assert rec.train_seconds >= 0.0


class TestTransferExperiment:
    def test_grid_runs_and_jsonl_log(self, tmp_path):
        runs_path = tmp_path / "runs.jsonl"
        records = run_transfer_experiment(
            tiny_corpora(), "a", target_sizes=[2, 4], seeds=[1, 2],
            base_config=tiny_config(),
            archs=(ArchKind.INDEPENDENT, ArchKind.ONE_TO_SHARE_MANY),
            runs_path=runs_path)
        assert len(records) == 2 * 2 * 2
        assert load_runs(runs_path) == records

    def test_baseline_arch_required(self):
        with pytest.raises(ValueError, match="independent baseline"):
            run_transfer_experiment(tiny_corpora(), "a", [2], [1],
                                    tiny_config(),
                                    archs=(ArchKind.ONE_TO_MANY,))

    def test_same_seed_reproduces_records_exactly(self, tmp_path):
        kw = dict(target_sizes=[3], seeds=[7],
                  archs=(ArchKind.INDEPENDENT, ArchKind.ONE_TO_MANY))
        a = run_transfer_experiment(tiny_corpora(), "a", base_config=tiny_config(), **kw)
        b = run_transfer_experiment(tiny_corpora(), "a", base_config=tiny_config(), **kw)
        # train_seconds is wall time; everything else must match bitwise
        strip = lambda r: {k: v for k, v in r.__dict__.items() if k != "train_seconds"}
        assert [strip(r) for r in a] == [strip(r) for r in b]


def fake_record(arch, size, seed, em):
    return RunRecord(arch=arch, target_task="a", target_size=size, seed=seed,
                     exact_match=em, token_accuracy=em, oov_copy_success=1.0,
                     test_size=50, steps=10, train_seconds=1.0)


class TestSummaries:
    records = [
        fake_record("independent", 100, 1, 0.10),
        fake_record("independent", 100, 2, 0.20),
        fake_record("one2sharemany", 100, 1, 0.60),
        fake_record("one2sharemany", 100, 2, 0.70),
        fake_record("independent", 2000, 1, 0.80),
        fake_record("one2sharemany", 2000, 1, 0.85),
    ]

    def test_means_sds_and_deltas(self):
        s = summarize(self.records)
        base = s["cells"]["100/independent"]
        shared = s["cells"]["100/one2sharemany"]
        assert abs(base["mean"] - 0.15) <= 1e-12
        assert abs(base["sd"] - np.std([0.1, 0.2], ddof=1)) <= 1e-12
        assert "delta" not in base
        assert abs(shared["delta"] - 0.5) <= 1e-12
        assert shared["n"] == 2
        # single-seed cells report sd 0 rather than NaN
        assert s["cells"]["2000/independent"]["sd"] == 0.0

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError, match="no run records"):
            summarize([])

    def test_report_regenerates_bit_identically_from_saved_lines(self, tmp_path):
        path = tmp_path / "runs.jsonl"
        path.write_text("".join(r.to_json() + "\n" for r in self.records))
        first = format_report(summarize(load_runs(path)))
        second = format_report(summarize(load_runs(path)))
        assert first == second
        assert "100" in first and "one2sharemany" in first
        assert "+0.5000" in first

    def test_report_orders_architectures_canonically(self):
        text = format_report(summarize(self.records))
        lines = [l for l in text.splitlines() if l.strip().startswith("100")]
        assert [l.split()[1] for l in lines] == ["independent", "one2sharemany"]
