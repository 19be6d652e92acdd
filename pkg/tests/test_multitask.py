"""Sharing architectures: assembly, routing, isolation, parameter counts."""

import numpy as np
import pytest

import multiparse.tensor as nc
from multiparse.data import Example, Vocabulary, copy_task_grammar, generate_synthetic
from multiparse.experiment import vocabs_for
from multiparse.model import Dims
from multiparse.multitask import (ROLES, SHARED, ArchKind, TaskSpec,
                                  assemble, augment_input, count_params,
                                  parameter_report, route_batch, sample_task)
from multiparse.training import batch_loss
from multiparse.data import prepare_batch

DIMS = Dims(embed=5, hidden=6, attn=4, layers=2)


def specs_pair():
    return [TaskSpec("a", Vocabulary(["(", ")", "run", "fox"])),
            TaskSpec("b", Vocabulary(["run", "nap", ":"]))]


def input_vocab_pair():
    return Vocabulary(["red", "blue", "fox", "cat", "runs", "sits", "naps"])


def assemble_pair(arch, seed=0):
    tasks = specs_pair()
    iv = input_vocab_pair()
    if arch is ArchKind.ONE_TO_ONE:
        for t in tasks:
            iv.add(t.artificial_token)
    return assemble(arch, tasks, DIMS, iv, seed=seed)


# closed-form sizes for the building blocks
def emb(v, e):
    return v * e


def gru(d_in, h, layers):
    total = 0
    d = d_in
    for _ in range(layers):
        total += 3 * (d * h + h * h + h)
        d = h
    return total


def attn(h, a):
    return 2 * h * a + a


def out(h, v):
    return 2 * h * v


class TestArchKind:
    def test_parse_all_names(self):
        for kind in ArchKind:
            assert ArchKind.parse(kind.value) is kind

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown architecture"):
            ArchKind.parse("all2all")


class TestTaskSpec:
    def test_default_marker_derives_from_id(self):
        assert TaskSpec("tree", Vocabulary()).artificial_token == "@tree@"

    def test_explicit_marker_kept(self):
        assert TaskSpec("t", Vocabulary(), artificial_token="#t").artificial_token == "#t"

    def test_bad_ids_rejected(self):
        for bad in ("", "a b", SHARED, "a/b"):
            with pytest.raises(ValueError):
                TaskSpec(bad, Vocabulary())


class TestAssemble:
    def test_duplicate_or_missing_tasks_rejected(self):
        v = Vocabulary(["x"])
        with pytest.raises(ValueError, match="no tasks"):
            assemble(ArchKind.INDEPENDENT, [], DIMS, v)
        dup = [TaskSpec("a", Vocabulary()), TaskSpec("a", Vocabulary())]
        with pytest.raises(ValueError, match="duplicate task ids"):
            assemble(ArchKind.INDEPENDENT, dup, DIMS, v)

    def test_one2one_requires_markers_in_input_vocab(self):
        with pytest.raises(ValueError, match="marker tokens"):
            assemble(ArchKind.ONE_TO_ONE, specs_pair(), DIMS, input_vocab_pair())

    def test_block_owners_per_architecture(self):
        expected_shared = {
            ArchKind.INDEPENDENT: set(),
            ArchKind.ONE_TO_MANY: {"input_embedding", "encoder"},
            ArchKind.ONE_TO_ONE: set(ROLES),
            ArchKind.ONE_TO_SHARE_MANY: set(ROLES) - {"output_layer"},
        }
        for arch, shared_roles in expected_shared.items():
            asm = assemble_pair(arch)
            for role in ROLES:
                if role in shared_roles:
                    assert (SHARED, role) in asm.parts
                    assert ("a", role) not in asm.parts
                else:
                    assert ("a", role) in asm.parts and ("b", role) in asm.parts
                    assert (SHARED, role) not in asm.parts

    def test_union_vocab_only_where_needed(self):
        assert assemble_pair(ArchKind.INDEPENDENT).union_vocab is None
        assert assemble_pair(ArchKind.ONE_TO_MANY).union_vocab is None
        union = assemble_pair(ArchKind.ONE_TO_ONE).union_vocab
        assert union is not None
        # first-seen merge across task vocabularies, reserved entries once
        assert union.tokens()[4:] == ("(", ")", "run", "fox", "nap", ":")

    def test_same_seed_reproduces_every_value(self):
        a = assemble_pair(ArchKind.ONE_TO_SHARE_MANY, seed=5)
        b = assemble_pair(ArchKind.ONE_TO_SHARE_MANY, seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert pa.name == pb.name
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_parameter_names_are_unique_owner_role_scoped(self):
        asm = assemble_pair(ArchKind.ONE_TO_MANY)
        names = [p.name for p in asm.parameters()]
        assert len(names) == len(set(names))
        assert any(n.startswith("shared/encoder") for n in names)
        assert any(n.startswith("a/attention") for n in names)


class TestRouting:
    def test_routes_shared_and_private_blocks_by_identity(self):
        asm = assemble_pair(ArchKind.ONE_TO_MANY)
        tm = route_batch(asm, "a")
        assert tm.net.encoder is asm.part(SHARED, "encoder")
        assert tm.net.input_embedding is asm.part(SHARED, "input_embedding")
        assert tm.net.attention is asm.part("a", "attention")
        assert tm.net.output is asm.part("a", "output_layer")

    def test_vocab_wiring_per_architecture(self):
        for arch in (ArchKind.INDEPENDENT, ArchKind.ONE_TO_MANY):
            tm = route_batch(assemble_pair(arch), "a")
            assert tm.embed_vocab is tm.output_vocab
            assert tm.output_vocab.tokens() == specs_pair()[0].decoder_vocab.tokens()
            assert tm.artificial_token is None

        asm = assemble_pair(ArchKind.ONE_TO_ONE)
        tm = route_batch(asm, "b")
        assert tm.embed_vocab is asm.union_vocab
        assert tm.output_vocab is asm.union_vocab
        assert tm.artificial_token == "@b@"

        asm = assemble_pair(ArchKind.ONE_TO_SHARE_MANY)
        tm = route_batch(asm, "b")
        assert tm.embed_vocab is asm.union_vocab
        assert tm.output_vocab.tokens() == specs_pair()[1].decoder_vocab.tokens()
        assert tm.artificial_token is None

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError, match="unknown task"):
            route_batch(assemble_pair(ArchKind.INDEPENDENT), "zzz")

    def test_task_model_parameters_cover_exactly_the_routed_blocks(self):
        asm = assemble_pair(ArchKind.ONE_TO_SHARE_MANY)
        tm = route_batch(asm, "a")
        routed = {id(p) for p in tm.parameters()}
        blocks = asm.blocks()
        for (owner, role), params in blocks.items():
            inside = {id(p) for p in params} <= routed
            assert inside == (owner in (SHARED, "a")), (owner, role)


def loss_for_task(asm, task_id):
    tm = route_batch(asm, task_id)
    data = {"a": [Example("a", ("red", "fox", "runs"), ("(", "run", "fox", ")"), 1)],
            "b": [Example("b", ("red", "cat", "naps"), ("nap", ":", "cat"), 1)]}
    batch = prepare_batch(data[task_id], tm.input_vocab, tm.output_vocab,
                          tm.embed_vocab, artificial_token=tm.artificial_token)
    loss, _ = batch_loss(tm, batch)
    return loss


class TestUpdateIsolation:
    @pytest.mark.parametrize("arch", list(ArchKind), ids=lambda a: a.value)
    def test_other_tasks_private_blocks_get_no_gradient(self, arch):
        asm = assemble_pair(arch)
        params = asm.parameters()
        nc.zero_grads(params)
        with nc.Tape() as tape:
            loss = loss_for_task(asm, "a")
        tape.backward(loss)
        for (owner, role), block in asm.blocks().items():
            touched = any(np.any(p.grad != 0.0) for p in block)
            if owner == "b":
                assert not touched, f"{owner}/{role} must stay untouched"
            else:
                # every routed block sits on task a's forward path
                assert touched, f"{owner}/{role} expected a gradient"


class TestCounts:
    def test_closed_form_block_sizes(self):
        asm = assemble_pair(ArchKind.ONE_TO_MANY)
        counts = count_params(asm)
        e, h, a, layers = DIMS.embed, DIMS.hidden, DIMS.attn, DIMS.layers
        v_in = len(asm.input_vocab)
        v_a = len(asm.task("a").decoder_vocab)
        v_b = len(asm.task("b").decoder_vocab)
        assert counts["shared/input_embedding"] == emb(v_in, e)
        assert counts["shared/encoder"] == gru(e, h, layers)
        assert counts["a/attention"] == attn(h, a)
        assert counts["a/output_embedding"] == emb(v_a, e)
        assert counts["a/decoder"] == gru(e + h, h, layers)
        assert counts["a/output_layer"] == out(h, v_a)
        assert counts["b/output_layer"] == out(h, v_b)
        assert counts["total"] == sum(v for k, v in counts.items() if k != "total")

    def test_totals_follow_sharing_order(self):
        # more sharing, fewer parameters; the one2one/sharemany gap is exactly
        # the output layers: n per-task blocks against one union-sized block
        corpora = generate_synthetic(copy_task_grammar(), 250, seed=7,
                                     split_ratios=(0.8, 0.0, 0.2))
        train_sets = {t: corpora[t]["train"] for t in corpora}
        input_vocab, dec = vocabs_for(train_sets)
        dims = Dims()
        totals = {}
        for arch in ArchKind:
            tasks = [TaskSpec(t, dec[t]) for t in sorted(train_sets)]
            iv = Vocabulary(input_vocab.tokens()[4:])
            if arch is ArchKind.ONE_TO_ONE:
                for t in tasks:
                    iv.add(t.artificial_token)
            asm = assemble(arch, tasks, dims, iv)
            totals[arch] = count_params(asm)["total"]
            if arch is ArchKind.ONE_TO_SHARE_MANY:
                per_task = sum(count_params(asm)[f"{t.task_id}/output_layer"]
                               for t in tasks)
            if arch is ArchKind.ONE_TO_ONE:
                union_block = count_params(asm)["shared/output_layer"]
                marker_rows = len(tasks) * dims.embed
        assert totals[ArchKind.INDEPENDENT] > totals[ArchKind.ONE_TO_MANY] \
            > totals[ArchKind.ONE_TO_SHARE_MANY] > totals[ArchKind.ONE_TO_ONE]
        gap = totals[ArchKind.ONE_TO_SHARE_MANY] - totals[ArchKind.ONE_TO_ONE]
        assert gap == per_task - union_block - marker_rows


class TestSamplingAndReport:
    def test_sample_task_uniform_and_in_range(self):
        rng = np.random.default_rng(0)
        draws = [sample_task(rng, 3) for _ in range(4000)]
        counts = np.bincount(draws, minlength=3)
        assert counts.sum() == 4000 and len(counts) == 3
        # 5 sigma around 4000/3
        assert counts.min() > 1180 and counts.max() < 1490

    def test_sample_task_rejects_empty(self):
        with pytest.raises(ValueError, match="at least one"):
            sample_task(np.random.default_rng(0), 0)

    def test_augment_input_only_under_one2one(self):
        task = TaskSpec("t", Vocabulary())
        assert augment_input(["x"], task, ArchKind.ONE_TO_ONE) == ["@t@", "x"]
        assert augment_input(["x"], task, ArchKind.ONE_TO_MANY) == ["x"]

    def test_parameter_report_lists_blocks_and_total(self):
        asm = assemble_pair(ArchKind.ONE_TO_SHARE_MANY)
        text = parameter_report(asm, step_seconds=0.1234)
        assert "architecture: one2sharemany" in text
        assert "shared/decoder" in text and "a/output_layer" in text
        assert "total" in text
        assert "123.4 ms" in text
