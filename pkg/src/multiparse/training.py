"""Training loop, learning-rate schedule, output post-processing, evaluation.

The protocol: plain SGD with global gradient-norm clipping, a fixed learning
rate for the first stretch of epochs and halving per epoch afterwards,
teacher forcing with the marginalized write-or-copy loss, one uniformly
sampled task per minibatch. Everything is deterministic under a fixed seed
and a single thread.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as nc
from .actions import ActionKind, gold_action_set, greedy_decode, marginal_nll
from .data import Batch, Example, prepare_batch, prepare_source
from .model import Dims, decoder_step, encode, initial_state, write_logits
from .multitask import ModelAssembly, TaskModel, route_batch, sample_task
from .tensor import NumericError

logger = logging.getLogger(__name__)

MAX_SKIPPED_STEPS = 3  # consecutive non-finite steps tolerated before aborting


class TrainingDivergence(RuntimeError):
    """Raised when loss or gradients stay non-finite for several steps."""


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.5
    lr_halve_after_epoch: int = 6
    batch_size: int = 32
    dropout: float = 0.2
    clip_norm: float = 5.0
    seed: int = 0
    max_source_len: int = 60
    max_target_len: int = 80
    dims: Dims = field(default_factory=Dims)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not 1 <= self.lr_halve_after_epoch <= self.epochs:
            raise ValueError(f"lr_halve_after_epoch must be in [1, {self.epochs}], "
                             f"got {self.lr_halve_after_epoch}")
        # lr 0 is allowed as a degenerate no-op run
        if self.lr < 0 or not 0 <= self.dropout < 1:
            raise ValueError("lr must be >= 0 and dropout in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.max_source_len < 2 or self.max_target_len < 2:
            raise ValueError("length limits must leave room for content")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in
             ("epochs", "lr", "lr_halve_after_epoch", "batch_size", "dropout",
              "clip_norm", "seed", "max_source_len", "max_target_len")}
        d["dims"] = self.dims.to_dict()
        return d


def lr_schedule(epoch: int, lr: float = 0.5, halve_after: int = 6) -> float:
    """Learning rate for a 1-based epoch: fixed through `halve_after`, then
    halved once per subsequent epoch."""
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    return lr * 2.0 ** -max(0, epoch - halve_after)


# ---------------------------------------------------------------------------
# loss


def example_loss(tm: TaskModel, feed_ids, gold_tokens, source, *,
                 dropout: float = 0.0, rng=None):
    """Teacher-forced loss for one example, summed over target positions.

    feed_ids[j] is the decoder input before predicting gold_tokens[j];
    gold_tokens ends with EOS. Returns (loss tensor (1,), fallback count).
    """
    enc = encode(source, tm.net, dropout=dropout, rng=rng)
    states_proj = nc.matmul(enc.states, tm.net.attention.w1)
    s = initial_state(tm.net.decoder)
    pieces = []
    fallbacks = 0
    for j, gold_tok in enumerate(gold_tokens):
        s, c, e = decoder_step(int(feed_ids[j]), s, enc, tm.net,
                               dropout=dropout, rng=rng, states_proj=states_proj)
        scores = write_logits(s[-1], c, tm.net.output, dropout=dropout, rng=rng)
        gold = gold_action_set(gold_tok, enc.surface, tm.output_vocab,
                               copy_mask=enc.copy_mask)
        fallbacks += int(gold.fallback)
        pieces.append(marginal_nll(scores, e, enc.copy_mask, gold))
    return nc.add_n(pieces), fallbacks


def batch_loss(tm: TaskModel, batch: Batch, *, dropout: float = 0.0, rng=None):
    """Mean over the batch of per-example position-summed losses."""
    pieces = []
    fallbacks = 0
    for i, ex in enumerate(batch.examples):
        src = prepare_source(ex.utterance, tm.input_vocab, tm.artificial_token)
        piece, fb = example_loss(tm, batch.feed_ids[i], batch.targets[i], src,
                                 dropout=dropout, rng=rng)
        fallbacks += fb
        pieces.append(piece)
    return nc.scale(nc.add_n(pieces), 1.0 / len(batch.examples)), fallbacks


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    log_lines: list[str]
    epoch_task_loss: dict[int, dict[str, float]]  # epoch -> task -> mean loss
    steps: int
    skipped_steps: int
    best_epoch: int | None = None  # set when dev selection ran


class _Batcher:
    """Cycles through one task's examples in reshuffled passes."""

    def __init__(self, examples: list[Example], batch_size: int,
                 rng: np.random.Generator):
        if not examples:
            raise ValueError("task corpus is empty")
        self.examples = examples
        self.batch_size = batch_size
        self.rng = rng
        self.order: list[int] = []
        self.pos = 0

    def next_batch(self) -> list[Example]:
        out = []
        while len(out) < min(self.batch_size, len(self.examples)):
            if self.pos >= len(self.order):
                self.order = list(self.rng.permutation(len(self.examples)))
                self.pos = 0
            out.append(self.examples[self.order[self.pos]])
            self.pos += 1
        return out


def train(asm: ModelAssembly, corpora: dict[str, list[Example]],
          config: TrainConfig, *, dev_corpora: dict[str, list[Example]] | None = None,
          log_fn=None) -> TrainResult:
    """Run the full schedule over the assembly's tasks.

    corpora maps task id -> training examples; every task in the assembly
    must be present. When dev_corpora is given, the epoch with the best mean
    dev exact match is kept (parameters restored at the end). log_fn receives
    each log line; lines also go to TrainResult.log_lines.
    """
    task_ids = [t.task_id for t in asm.tasks]
    missing = [t for t in task_ids if t not in corpora or not corpora[t]]
    if missing:
        raise ValueError(f"train: empty or missing corpora for tasks {missing}")

    lines: list[str] = []

    def emit(line: str):
        lines.append(line)
        if log_fn is not None:
            log_fn(line)

    rng = np.random.default_rng(config.seed)
    models = {tid: route_batch(asm, tid) for tid in task_ids}
    batchers = {tid: _Batcher(corpora[tid], config.batch_size, rng)
                for tid in task_ids}
    total = sum(len(corpora[t]) for t in task_ids)
    steps_per_epoch = max(1, math.ceil(total / config.batch_size))

    all_params = asm.parameters()
    best_snapshot = None
    best_score = -1.0
    best_epoch = None
    gstep = 0
    skipped_total = 0
    consecutive_bad = 0
    epoch_task_loss: dict[int, dict[str, float]] = {}

    for epoch in range(1, config.epochs + 1):
        lr = lr_schedule(epoch, config.lr, config.lr_halve_after_epoch)
        emit(f"epoch={epoch} lr={lr!r}")
        sums: dict[str, float] = {t: 0.0 for t in task_ids}
        counts: dict[str, int] = {t: 0 for t in task_ids}

        for _ in range(steps_per_epoch):
            gstep += 1
            tid = task_ids[sample_task(rng, len(task_ids))]
            tm = models[tid]
            batch = prepare_batch(
                batchers[tid].next_batch(), tm.input_vocab, tm.output_vocab,
                tm.embed_vocab, artificial_token=tm.artificial_token,
                max_source_len=config.max_source_len,
                max_target_len=config.max_target_len)
            for s in batch.skipped:
                emit(f"skip {s}")

            with nc.Tape() as tape:
                loss, _ = batch_loss(tm, batch, dropout=config.dropout, rng=rng)
                val = loss.item()
                if not np.isfinite(val):
                    skipped_total += 1
                    consecutive_bad += 1
                    emit(f"step={gstep} epoch={epoch} task={tid} lr={lr!r} "
                         f"loss={val!r} skipped=non-finite-loss")
                    if consecutive_bad >= MAX_SKIPPED_STEPS:
                        raise TrainingDivergence(
                            f"{consecutive_bad} consecutive non-finite steps "
                            f"(last at step {gstep}, task {tid})")
                    continue
                tape.backward(loss)
            try:
                nc.sgd_step(tm.parameters(), lr, clip_norm=config.clip_norm)
            except NumericError as err:
                skipped_total += 1
                consecutive_bad += 1
                for p in tm.parameters():
                    p.grad[...] = 0.0
                emit(f"step={gstep} epoch={epoch} task={tid} lr={lr!r} "
                     f"loss={val!r} skipped=non-finite-grad ({err})")
                if consecutive_bad >= MAX_SKIPPED_STEPS:
                    raise TrainingDivergence(
                        f"{consecutive_bad} consecutive non-finite steps "
                        f"(last at step {gstep}, task {tid})") from err
                continue
            consecutive_bad = 0
            sums[tid] += val
            counts[tid] += 1
            emit(f"step={gstep} epoch={epoch} task={tid} lr={lr!r} loss={val!r}")

        epoch_task_loss[epoch] = {
            t: (sums[t] / counts[t]) if counts[t] else float("nan")
            for t in task_ids}
        for t in task_ids:
            emit(f"epoch={epoch} task={t} mean_loss={epoch_task_loss[epoch][t]!r}")

        if dev_corpora:
            scores = []
            for t in task_ids:
                if dev_corpora.get(t):
                    rep = evaluate(models[t], dev_corpora[t])
                    scores.append(rep.exact_match)
            score = sum(scores) / len(scores) if scores else 0.0
            emit(f"epoch={epoch} dev_exact_match={score!r}")
            if score > best_score:
                best_score = score
                best_epoch = epoch
                best_snapshot = [p.data.copy() for p in all_params]

    if best_snapshot is not None:
        for p, snap in zip(all_params, best_snapshot):
            p.data[...] = snap
            p.grad[...] = 0.0
        emit(f"restored epoch={best_epoch} dev_exact_match={best_score!r}")

    return TrainResult(log_lines=lines, epoch_task_loss=epoch_task_loss,
                       steps=gstep, skipped_steps=skipped_total,
                       best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# post-processing


def balance_brackets(tokens) -> list[str]:
    """Drop unmatched closers left to right, append missing closers at end."""
    out = []
    depth = 0
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            if depth == 0:
                continue
            depth -= 1
        out.append(tok)
    out.extend(")" for _ in range(depth))
    return out


def _parse_spans(tokens):
    """Nested-list view of a balanced token sequence; leaves stay strings."""
    root: list = []
    stack = [root]
    for tok in tokens:
        if tok == "(":
            node: list = []
            stack[-1].append(node)
            stack.append(node)
        elif tok == ")":
            stack.pop()
        else:
            stack[-1].append(tok)
    return root


def _serialize(node) -> list[str]:
    out: list[str] = []
    for child in node:
        if isinstance(child, list):
            out.append("(")
            out.extend(_serialize(child))
            out.append(")")
        else:
            out.append(child)
    return out


def _dedupe(node) -> list:
    """Remove repeated bracketed sibling spans, keeping first occurrences.

    Applies bottom-up so inner duplicates collapse before outer comparison.
    Bare tokens are never units of production and are left alone.
    """
    seen: set[tuple[str, ...]] = set()
    out = []
    for child in node:
        if not isinstance(child, list):
            out.append(child)
            continue
        child = _dedupe(child)
        key = tuple(_serialize(child))
        if key in seen:
            continue
        seen.add(key)
        out.append(child)
    return out


def postprocess(tokens) -> list[str]:
    """Balance brackets, then drop duplicate bracketed sibling spans."""
    balanced = balance_brackets(tokens)
    if "(" not in balanced:
        return balanced
    return _serialize(_dedupe(_parse_spans(balanced)))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    task_id: str
    n_examples: int
    n_correct: int
    exact_match: float
    token_accuracy: float
    oov_copy_success: float
    oov_gold_tokens: int      # denominator behind oov_copy_success
    errors: list[dict]        # example_id, utterance, gold, predicted

    def summary(self) -> str:
        return (f"task={self.task_id} n={self.n_examples} "
                f"exact_match={self.exact_match:.4f} "
                f"token_accuracy={self.token_accuracy:.4f} "
                f"oov_copy_success={self.oov_copy_success:.4f} "
                f"(over {self.oov_gold_tokens} OOV gold tokens)")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id, "n_examples": self.n_examples,
            "n_correct": self.n_correct, "exact_match": self.exact_match,
            "token_accuracy": self.token_accuracy,
            "oov_copy_success": self.oov_copy_success,
            "oov_gold_tokens": self.oov_gold_tokens, "errors": self.errors,
        }


def _decode_one(tm: TaskModel, ex: Example, max_len: int | None):
    src = prepare_source(ex.utterance, tm.input_vocab, tm.artificial_token)
    enc = encode(src, tm.net)
    res = greedy_decode(enc, tm.net, tm.embed_vocab, tm.output_vocab,
                        max_len=max_len)
    return res


def eval_threads() -> int:
    raw = os.environ.get("MULTIPARSE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer MULTIPARSE_THREADS=%r", raw)
        return 1
    return max(1, n)


def evaluate(tm: TaskModel, examples: list[Example],
             max_len: int | None = None) -> EvalReport:
    """Greedy-decode every example and score post-processed exact match.

    Token accuracy counts position-wise matches over the longer of the two
    sequences. OOV-copy success is the fraction of gold tokens outside the
    write vocabulary that the decoder emitted at all, via Copy actions
    (occurrence-counted); it is 1.0 when the test set has no such tokens.
    Decoding may fan out over MULTIPARSE_THREADS threads; scoring order is
    the corpus order either way.
    """
    if not examples:
        raise ValueError("evaluate: empty example list")
    threads = eval_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda ex: _decode_one(tm, ex, max_len), examples))
    else:
        results = [_decode_one(tm, ex, max_len) for ex in examples]

    n_correct = 0
    tok_hits = 0
    tok_total = 0
    oov_hits = 0
    oov_total = 0
    errors: list[dict] = []
    for ex, res in zip(examples, results):
        pred = postprocess(res.tokens)
        gold = postprocess(list(ex.logical_form))
        if pred == gold:
            n_correct += 1
        else:
            errors.append({
                "example_id": ex.example_id,
                "utterance": " ".join(ex.utterance),
                "gold": " ".join(gold),
                "predicted": " ".join(pred),
            })
        span = max(len(pred), len(gold))
        tok_total += span
        tok_hits += sum(1 for a, b in zip(pred, gold) if a == b)

        oov = [t for t in set(ex.logical_form) if tm.output_vocab.id(t) is None]
        if oov:
            copied: dict[str, int] = {}
            for tok, act in zip(res.tokens, res.actions):
                if act.kind is ActionKind.COPY:
                    copied[tok] = copied.get(tok, 0) + 1
            for t in oov:
                want = ex.logical_form.count(t)
                oov_total += want
                oov_hits += min(want, copied.get(t, 0))

    n = len(examples)
    return EvalReport(
        task_id=examples[0].task_id, n_examples=n, n_correct=n_correct,
        exact_match=n_correct / n,
        token_accuracy=(tok_hits / tok_total) if tok_total else 1.0,
        oov_copy_success=(oov_hits / oov_total) if oov_total else 1.0,
        oov_gold_tokens=oov_total, errors=errors)
