"""Joint write/copy action space, marginalized loss, and greedy decoding.

At every decoder step the model chooses among Write[y] for each decoder
vocabulary entry and Copy[i] for each copyable source position, normalized
by one softmax over the concatenation [all writes; all copies] in that
fixed order. A gold token may be generated by several actions (an in-vocab
token that also occurs in the source), so the step loss marginalizes:
-log of the summed probability of every generating action.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as nc
from .model import EncoderOutput, Seq2SeqParams, decoder_step, initial_state, write_logits
from .tensor import Tensor

logger = logging.getLogger(__name__)

LOSS_FLOOR = 1e-30  # probability sums below this are clamped before the log


class ActionKind(enum.Enum):
    WRITE = "write"
    COPY = "copy"


@dataclass(frozen=True)
class Action:
    """Write[index into the decoder vocabulary] or Copy[source position]."""
    kind: ActionKind
    index: int

    @staticmethod
    def write(index: int) -> "Action":
        return Action(ActionKind.WRITE, index)

    @staticmethod
    def copy(index: int) -> "Action":
        return Action(ActionKind.COPY, index)

    def __repr__(self) -> str:
        return f"{'Write' if self.kind is ActionKind.WRITE else 'Copy'}[{self.index}]"


@dataclass
class ActionDistribution:
    """Probabilities over [Write[0..V-1]; Copy[0..m-1]], summing to 1."""
    probs: Tensor
    vocab_size: int
    source_len: int

    def flat_index(self, a: Action) -> int:
        if a.kind is ActionKind.WRITE:
            if not 0 <= a.index < self.vocab_size:
                raise ValueError(f"{a!r} outside vocabulary of size {self.vocab_size}")
            return a.index
        if not 0 <= a.index < self.source_len:
            raise ValueError(f"{a!r} outside source of length {self.source_len}")
        return self.vocab_size + a.index

    def action_at(self, flat: int) -> Action:
        if flat < self.vocab_size:
            return Action.write(flat)
        return Action.copy(flat - self.vocab_size)

    def prob(self, a: Action) -> float:
        return float(self.probs.data[self.flat_index(a)])

    def argmax(self) -> Action:
        # np.argmax takes the first maximum, so ties resolve to the lowest
        # flat index: writes before copies, each in ascending index order
        return self.action_at(int(np.argmax(self.probs.data)))

    def top(self, k: int) -> list[tuple[Action, float]]:
        order = np.argsort(-self.probs.data, kind="stable")[:k]
        return [(self.action_at(int(i)), float(self.probs.data[i])) for i in order]


def action_distribution(write_scores: Tensor, copy_scores: Tensor,
                        copy_mask) -> ActionDistribution:
    """One softmax over write and copy scores jointly.

    write_scores (V,), copy_scores (m,); copy_mask marks which source
    positions may be copied (padding and marker tokens may not). Masked
    positions get probability exactly 0.
    """
    if write_scores.data.ndim != 1 or copy_scores.data.ndim != 1:
        raise ValueError("action_distribution: scores must be 1-D")
    v = write_scores.data.size
    m = copy_scores.data.size
    mask = np.asarray(copy_mask, dtype=bool)
    if mask.shape != (m,):
        raise ValueError(f"action_distribution: copy mask shape {mask.shape} "
                         f"does not match {m} copy scores")
    if v + int(mask.sum()) == 0:
        raise ValueError("action_distribution: empty action space")
    joint = nc.concat(write_scores, copy_scores, axis=0)
    full_mask = np.concatenate([np.ones(v, dtype=bool), mask])
    probs = nc.softmax(joint, mask=full_mask)
    return ActionDistribution(probs=probs, vocab_size=v, source_len=m)


@dataclass(frozen=True)
class GoldActions:
    """Every action that generates the gold token, plus whether we had to
    fall back to Write[UNK] because nothing does."""
    actions: frozenset[Action]
    fallback: bool


def gold_action_set(gold_token: str, source_surface, vocab, copy_mask=None,
                    ) -> GoldActions:
    """All actions producing gold_token: its Write id if in-vocab, and one
    Copy per copyable source position holding the same surface token.

    An uncoverable token maps to Write[UNK] with the fallback flag set, so
    callers can report coverage instead of silently training on UNK.
    """
    actions: set[Action] = set()
    wid = vocab.id(gold_token)
    if wid is not None:
        actions.add(Action.write(wid))
    if copy_mask is None:
        copy_mask = [True] * len(source_surface)
    for i, (tok, ok) in enumerate(zip(source_surface, copy_mask)):
        if ok and tok == gold_token:
            actions.add(Action.copy(i))
    if actions:
        return GoldActions(frozenset(actions), fallback=False)
    return GoldActions(frozenset([Action.write(vocab.unk_id)]), fallback=True)


def step_loss(dist: ActionDistribution, gold) -> Tensor:
    """-log of the total probability of the gold action set, as a (1,) tensor.

    `gold` is a GoldActions or any iterable of Actions. The sum is floored at
    LOSS_FLOOR before the log; adding an action to the gold set can therefore
    never increase the loss.
    """
    if isinstance(gold, GoldActions):
        gold = gold.actions
    flats = sorted(dist.flat_index(a) for a in gold)
    if not flats:
        raise ValueError("step_loss: empty gold action set")
    total = nc.sum_all(nc.take(dist.probs, flats))
    return nc.scale(nc.log(total, floor=LOSS_FLOOR), -1.0)


def marginal_nll(write_scores: Tensor, copy_scores: Tensor, copy_mask,
                 gold) -> Tensor:
    """step_loss(action_distribution(...), gold) collapsed into one record.

    Same mathematics as the composed path (kept for decoding and as the
    cross-check in tests); one softmax-NLL closure instead of six small ops,
    which is what the training loop runs per target position.
    """
    if isinstance(gold, GoldActions):
        gold = gold.actions
    wd, cd = write_scores.data, copy_scores.data
    if wd.ndim != 1 or cd.ndim != 1:
        raise ValueError("marginal_nll: scores must be 1-D")
    v, m = wd.size, cd.size
    mask = np.asarray(copy_mask, dtype=bool)
    if mask.shape != (m,):
        raise ValueError(f"marginal_nll: copy mask shape {mask.shape} "
                         f"does not match {m} copy scores")
    flats = []
    for a in gold:
        if a.kind is ActionKind.WRITE:
            if not 0 <= a.index < v:
                raise ValueError(f"{a!r} outside vocabulary of size {v}")
            flats.append(a.index)
        else:
            if not 0 <= a.index < m:
                raise ValueError(f"{a!r} outside source of length {m}")
            flats.append(v + a.index)
    if not flats:
        raise ValueError("marginal_nll: empty gold action set")
    flats = sorted(set(flats))

    full_mask = (None if mask.all()
                 else np.concatenate([np.ones(v, dtype=bool), mask]))
    p = nc.softmax_values(np.concatenate([wd, cd]), full_mask)
    gold_p = float(p[flats].sum())
    floored = gold_p < LOSS_FLOOR
    if floored:
        logger.warning("marginal_nll: gold probability %.3g floored at %.3g; "
                       "zero gradient for this position", gold_p, LOSS_FLOOR)
    out = Tensor([-np.log(max(gold_p, LOSS_FLOOR))])

    def backward(g):
        if floored:
            return (np.zeros(v), np.zeros(m))
        d = p.copy()
        d[flats] -= p[flats] / gold_p
        d *= g[0]
        return (d[:v], d[v:])

    nc.record(out, (write_scores, copy_scores), backward)
    return out


@dataclass
class DecodeResult:
    tokens: list[str]            # emitted surface tokens, EOS excluded
    actions: list[Action]        # chosen actions, including the final EOS write
    trace: list[str] | None      # per-step lines when tracing was requested


def greedy_decode(enc: EncoderOutput, net: Seq2SeqParams, embed_vocab, output_vocab,
                  max_len: int | None = None, want_trace: bool = False) -> DecodeResult:
    """Argmax decoding with copy support.

    Copy[i] emits the original surface token recorded at encoder position i;
    Write[y] emits output_vocab's token y. The next step is fed the emitted
    token's id in embed_vocab (UNK when out of vocabulary). Stops on
    Write[EOS] or after max_len steps (default 2 * source length + 10).
    """
    m = enc.states.shape[0]
    if max_len is None:
        max_len = 2 * m + 10
    if max_len < 1:
        raise ValueError(f"greedy_decode: max_len must be >= 1, got {max_len}")

    tokens: list[str] = []
    actions: list[Action] = []
    trace: list[str] | None = [] if want_trace else None
    s = initial_state(net.decoder)
    y_prev = embed_vocab.bos_id
    states_proj = nc.matmul(enc.states, net.attention.w1)

    for step in range(max_len):
        s, ctx, e = decoder_step(y_prev, s, enc, net, states_proj=states_proj)
        logits = write_logits(s[-1], ctx, net.output)
        dist = action_distribution(logits, e, enc.copy_mask)
        act = dist.argmax()
        if act.kind is ActionKind.WRITE:
            token = output_vocab.token(act.index)
        else:
            token = enc.surface[act.index]
        if trace is not None:
            alts = ", ".join(f"{a!r}({_token_of(a, enc, output_vocab)!r}) p={p:.4f}"
                             for a, p in dist.top(3))
            trace.append(f"step={step} chose={act!r}({token!r}) | top3: {alts}")
        actions.append(act)
        if act.kind is ActionKind.WRITE and act.index == output_vocab.eos_id:
            break
        tokens.append(token)
        y_prev = embed_vocab.id_or_unk(token)
    return DecodeResult(tokens=tokens, actions=actions, trace=trace)


def _token_of(a: Action, enc: EncoderOutput, output_vocab) -> str:
    if a.kind is ActionKind.WRITE:
        return output_vocab.token(a.index)
    return enc.surface[a.index]
