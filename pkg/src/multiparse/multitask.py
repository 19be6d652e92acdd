"""Parameter sharing architectures over several parsing tasks.

Four wirings of the same encoder-decoder skeleton:

  independent    one full parameter set per task, nothing shared
  one2many       shared input embedding and encoder; per-task attention,
                 decoder, output embedding and output layer
  one2one        one model for all tasks; the decoder vocabulary is the
                 union of the task vocabularies, and the task is signaled
                 by an artificial marker token prepended to the input
                 (before reversal, so the encoder consumes it last)
  one2sharemany  shared everything except a per-task output layer

Training updates only the parameters routed to the task of the current
minibatch, so per-task blocks of other tasks never move.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as nc
from .data import Vocabulary
from .model import (INIT_SCALE, AttentionParams, Dims, Embedding, Seq2SeqParams,
                    gru_stack, stack_params)
from .tensor import Parameter

SHARED = "shared"
ROLES = ("input_embedding", "encoder", "attention",
         "output_embedding", "decoder", "output_layer")


class ArchKind(enum.Enum):
    INDEPENDENT = "independent"
    ONE_TO_MANY = "one2many"
    ONE_TO_ONE = "one2one"
    ONE_TO_SHARE_MANY = "one2sharemany"

    @classmethod
    def parse(cls, name: str) -> "ArchKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown architecture {name!r}; "
                         f"expected one of {[k.value for k in cls]}")


@dataclass
class TaskSpec:
    """One parsing task: its id, its decoder vocabulary, and the marker token
    used to signal it under the one2one wiring."""
    task_id: str
    decoder_vocab: Vocabulary
    artificial_token: str = ""

    def __post_init__(self):
        if not self.task_id or any(c.isspace() for c in self.task_id):
            raise ValueError(f"bad task id {self.task_id!r}")
        if self.task_id == SHARED or "/" in self.task_id:
            raise ValueError(f"task id {self.task_id!r} is reserved")
        if not self.artificial_token:
            self.artificial_token = f"@{self.task_id}@"


@dataclass
class TaskModel:
    """Everything one task's forward pass needs after routing."""
    task_id: str
    arch: ArchKind
    net: Seq2SeqParams
    input_vocab: Vocabulary
    embed_vocab: Vocabulary    # indexes the output-side embedding table
    output_vocab: Vocabulary   # indexes the output layer / write actions
    artificial_token: str | None  # set only under one2one

    def parameters(self) -> list[Parameter]:
        return self.net.params()


@dataclass
class ModelAssembly:
    arch: ArchKind
    dims: Dims
    input_vocab: Vocabulary
    tasks: list[TaskSpec]
    union_vocab: Vocabulary | None
    parts: dict[tuple[str, str], object] = field(default_factory=dict)  # (owner, role)

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise ValueError(f"unknown task {task_id!r}; "
                         f"assembly has {[t.task_id for t in self.tasks]}")

    def part(self, owner: str, role: str):
        return self.parts[(owner, role)]

    def blocks(self) -> dict[tuple[str, str], list[Parameter]]:
        """Parameters per (owner, role) block; blocks partition the model."""
        out = {}
        for key, comp in self.parts.items():
            out[key] = _component_params(comp)
        return out

    def parameters(self) -> list[Parameter]:
        return [p for params in self.blocks().values() for p in params]


def _component_params(comp) -> list[Parameter]:
    if isinstance(comp, Embedding):
        return [comp.table]
    if isinstance(comp, AttentionParams):
        return comp.params()
    if isinstance(comp, Parameter):
        return [comp]
    if isinstance(comp, list):  # GRU stack
        return stack_params(comp)
    raise TypeError(f"unknown component type {type(comp)!r}")


def assemble(arch: ArchKind, tasks: list[TaskSpec], dims: Dims,
             input_vocab: Vocabulary, seed: int = 0) -> ModelAssembly:
    """Create and wire all parameter blocks for an architecture.

    Initialization order is fixed (shared first, then tasks in the given
    order, roles in ROLES order), so a seed fully determines every value.
    Under one2one the artificial marker of every task must already be in
    the input vocabulary.
    """
    ids = [t.task_id for t in tasks]
    if not tasks:
        raise ValueError("assemble: no tasks")
    if len(set(ids)) != len(ids):
        raise ValueError(f"assemble: duplicate task ids in {ids}")
    if arch is ArchKind.ONE_TO_ONE:
        missing = [t.artificial_token for t in tasks if t.artificial_token not in input_vocab]
        if missing:
            raise ValueError(f"assemble: marker tokens {missing} missing from "
                             "the input vocabulary")

    union = None
    if arch in (ArchKind.ONE_TO_ONE, ArchKind.ONE_TO_SHARE_MANY):
        union = Vocabulary.union([t.decoder_vocab for t in tasks])

    rng = np.random.default_rng(seed)
    asm = ModelAssembly(arch=arch, dims=dims, input_vocab=input_vocab,
                        tasks=list(tasks), union_vocab=union)

    def build(owner: str, role: str, vocab: Vocabulary | None = None):
        name = f"{owner}/{role}"
        if role == "input_embedding":
            comp = Embedding.create(name, len(input_vocab), dims.embed, rng)
        elif role == "encoder":
            comp = gru_stack(name, dims.embed, dims.hidden, dims.layers, rng)
        elif role == "attention":
            comp = AttentionParams.create(name, dims.hidden, dims.attn, rng)
        elif role == "output_embedding":
            comp = Embedding.create(name, len(vocab), dims.embed, rng)
        elif role == "decoder":
            comp = gru_stack(name, dims.embed + dims.hidden, dims.hidden, dims.layers, rng)
        elif role == "output_layer":
            comp = Parameter(name, rng.uniform(-INIT_SCALE, INIT_SCALE,
                                               (2 * dims.hidden, len(vocab))))
        else:
            raise ValueError(role)
        asm.parts[(owner, role)] = comp

    shared_roles = {
        ArchKind.INDEPENDENT: (),
        ArchKind.ONE_TO_MANY: ("input_embedding", "encoder"),
        ArchKind.ONE_TO_ONE: ROLES,
        ArchKind.ONE_TO_SHARE_MANY: ("input_embedding", "encoder", "attention",
                                     "output_embedding", "decoder"),
    }[arch]

    for role in ROLES:
        if role in shared_roles:
            build(SHARED, role, union)
        else:
            for t in tasks:
                build(t.task_id, role, t.decoder_vocab)
    return asm


def route_batch(asm: ModelAssembly, task_id: str) -> TaskModel:
    """Resolve which blocks and vocabularies a task's minibatch uses."""
    task = asm.task(task_id)
    arch = asm.arch

    def pick(role: str):
        key = (SHARED, role)
        if key in asm.parts:
            return asm.parts[key]
        return asm.parts[(task_id, role)]

    net = Seq2SeqParams(
        input_embedding=pick("input_embedding"),
        encoder=pick("encoder"),
        attention=pick("attention"),
        output_embedding=pick("output_embedding"),
        decoder=pick("decoder"),
        output=pick("output_layer"),
    )
    if arch in (ArchKind.INDEPENDENT, ArchKind.ONE_TO_MANY):
        embed_vocab, output_vocab = task.decoder_vocab, task.decoder_vocab
    elif arch is ArchKind.ONE_TO_ONE:
        embed_vocab, output_vocab = asm.union_vocab, asm.union_vocab
    else:  # one2sharemany: shared feedback embedding, per-task write space
        embed_vocab, output_vocab = asm.union_vocab, task.decoder_vocab
    return TaskModel(
        task_id=task_id, arch=arch, net=net, input_vocab=asm.input_vocab,
        embed_vocab=embed_vocab, output_vocab=output_vocab,
        artificial_token=task.artificial_token if arch is ArchKind.ONE_TO_ONE else None,
    )


def sample_task(rng: np.random.Generator, n_tasks: int) -> int:
    """Uniform source pick per minibatch; returns an index in [0, n_tasks)."""
    if n_tasks < 1:
        raise ValueError(f"sample_task: need at least one task, got {n_tasks}")
    return int(rng.integers(n_tasks))


def augment_input(tokens, task: TaskSpec, arch: ArchKind) -> list[str]:
    """Prepend the task marker under one2one; identity otherwise."""
    if arch is ArchKind.ONE_TO_ONE:
        return [task.artificial_token, *tokens]
    return list(tokens)


def count_params(asm: ModelAssembly) -> dict[str, int]:
    """Entry count per block, plus 'total'. Block keys read 'owner/role'."""
    out: dict[str, int] = {}
    total = 0
    for (owner, role), params in asm.blocks().items():
        n = sum(p.data.size for p in params)
        out[f"{owner}/{role}"] = n
        total += n
    out["total"] = total
    return out


def parameter_report(asm: ModelAssembly, step_seconds: float | None = None) -> str:
    """Human-readable size table, one row per block."""
    counts = count_params(asm)
    total = counts.pop("total")
    width = max(len(k) for k in counts)
    lines = [f"architecture: {asm.arch.value}",
             f"tasks: {', '.join(t.task_id for t in asm.tasks)}"]
    lines.append(f"{'block'.ljust(width)}  params")
    for key in counts:
        lines.append(f"{key.ljust(width)}  {counts[key]:>10,}")
    lines.append(f"{'total'.ljust(width)}  {total:>10,}")
    if step_seconds is not None:
        lines.append(f"measured step wall-time: {step_seconds * 1000:.1f} ms")
    return "\n".join(lines)


def measure_step_time(step_fn, repeats: int = 3) -> float:
    """Median wall-time of a callable, for the parameter report."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        step_fn()
        times.append(time.perf_counter() - t0)
    return sorted(times)[len(times) // 2]
