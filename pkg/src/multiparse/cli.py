"""Command line interface.

Subcommands: gen-data, train, eval, decode, gradcheck, experiment.
Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
runtime failures (divergence, numeric errors, I/O trouble mid-run).

Training options resolve in three layers: built-in defaults, then a
key=value config file (--config), then explicit flags. Flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as nc
from .data import (Example, GrammarSpec, copy_task_grammar, generate_synthetic,
                   load_corpus, load_grammar, oov_stats, prepare_batch,
                   prepare_source, save_corpus, transfer_grammar)
from .experiment import (load_runs, format_report, run_transfer_experiment,
                         summarize, vocabs_for)
from .model import Dims, encode
from .actions import greedy_decode
from .multitask import (ArchKind, TaskSpec, assemble, parameter_report,
                        route_batch)
from .runio import (TRAIN_LOG_FILE, load_run, save_run, sha256_file,
                    write_manifest)
from .tensor import NumericError
from .training import (TrainConfig, TrainingDivergence, batch_loss, evaluate,
                       postprocess, train)


class UsageError(Exception):
    """Bad invocation or bad configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise UsageError(message)


# ---------- option resolution ----------

# key -> value type; keys are config-file spellings (flags use '-' for '_')
_CONFIG_KEYS = {
    "arch": str, "seed": int, "epochs": int, "lr": float,
    "lr_halve_after": int, "batch": int, "hidden": int, "embed": int,
    "attn": int, "layers": int, "dropout": float, "clip": float,
    "max_len": int, "max_source_len": int,
}


def parse_config_file(path) -> dict:
    """key=value per line, '#' starts a comment, unknown keys are rejected."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
        typ = _CONFIG_KEYS[key]
        if typ is str:
            out[key] = value
        else:
            try:
                out[key] = typ(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: {key} needs a {typ.__name__}, "
                                 f"got {value!r}") from None
    return out


def add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="key=value option file; explicit flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-halve-after", type=int, dest="lr_halve_after",
                   help="last epoch at the base rate; default min(6, epochs)")
    p.add_argument("--batch", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--embed", type=int)
    p.add_argument("--attn", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--max-len", type=int, dest="max_len",
                   help="max target length (tokens incl. end marker)")
    p.add_argument("--max-source-len", type=int, dest="max_source_len")


def resolve_settings(args) -> dict:
    settings = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def config_from_settings(settings: dict) -> TrainConfig:
    dims_default = Dims()
    dims = Dims(embed=settings.get("embed", dims_default.embed),
                hidden=settings.get("hidden", dims_default.hidden),
                attn=settings.get("attn", dims_default.attn),
                layers=settings.get("layers", dims_default.layers))
    base = TrainConfig()
    epochs = settings.get("epochs", base.epochs)
    halve = settings.get("lr_halve_after",
                         min(base.lr_halve_after_epoch, max(epochs, 1)))
    try:
        return TrainConfig(
            epochs=epochs,
            lr=settings.get("lr", base.lr),
            lr_halve_after_epoch=halve,
            batch_size=settings.get("batch", base.batch_size),
            dropout=settings.get("dropout", base.dropout),
            clip_norm=settings.get("clip", base.clip_norm),
            seed=settings.get("seed", base.seed),
            max_source_len=settings.get("max_source_len", base.max_source_len),
            max_target_len=settings.get("max_len", base.max_target_len),
            dims=dims,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


# ---------- corpus files ----------

def split_path(data_dir, task: str, split: str) -> Path:
    return Path(data_dir) / f"{task}_{split}.tsv"


def discover_tasks(data_dir) -> list[str]:
    d = Path(data_dir)
    if not d.is_dir():
        raise UsageError(f"data directory {d} does not exist")
    tasks = sorted(p.name[:-len("_train.tsv")] for p in d.glob("*_train.tsv"))
    if not tasks:
        raise UsageError(f"no *_train.tsv corpus files in {d}")
    return tasks


def load_split(data_dir, task: str, split: str, *, required: bool = True) -> list[Example]:
    path = split_path(data_dir, task, split)
    if not path.exists():
        if required:
            raise UsageError(f"missing corpus file {path}")
        return []
    try:
        examples, problems = load_corpus(path, task)
    except ValueError as e:
        raise UsageError(str(e)) from None
    for line in problems:
        print(f"warning: {path.name}: {line}", file=sys.stderr)
    return examples


def prepare_out_dir(path, force: bool) -> Path:
    d = Path(path)
    if d.exists():
        if not d.is_dir():
            raise UsageError(f"{d} exists and is not a directory")
        if any(d.iterdir()) and not force:
            raise UsageError(f"output directory {d} is not empty (use --force to reuse)")
    else:
        d.mkdir(parents=True)
    return d


# ---------- gen-data ----------

_BUILTIN_GRAMMARS = {"copy": copy_task_grammar, "transfer": transfer_grammar}


def resolve_grammar(name: str) -> GrammarSpec:
    if name in _BUILTIN_GRAMMARS:
        return _BUILTIN_GRAMMARS[name]()
    path = Path(name)
    if not path.exists():
        raise UsageError(f"grammar {name!r} is neither a built-in "
                         f"({', '.join(sorted(_BUILTIN_GRAMMARS))}) nor an existing file")
    try:
        return load_grammar(path)
    except (ValueError, OSError) as e:
        raise UsageError(f"invalid grammar {name}: {e}") from None


def parse_counts(text: str, task_ids: tuple[str, str]):
    if "=" not in text:
        try:
            return int(text)
        except ValueError:
            raise UsageError(f"--n needs an integer or task=count pairs, got {text!r}") from None
    out: dict[str, int] = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        try:
            out[key] = int(value)
        except ValueError:
            raise UsageError(f"--n: bad count for {key!r}: {value.strip()!r}") from None
    if set(out) != set(task_ids):
        raise UsageError(f"--n names {sorted(out)}, expected {sorted(task_ids)}")
    return out


def cmd_gen_data(args) -> int:
    task_ids = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    if len(task_ids) != 2:
        raise UsageError(f"--tasks needs exactly two names, got {args.tasks!r}")
    spec = resolve_grammar(args.grammar)
    counts = parse_counts(args.n, task_ids)
    try:
        ratios = tuple(float(x) for x in args.splits.split(","))
    except ValueError:
        raise UsageError(f"--splits needs three comma-separated floats, got {args.splits!r}") from None
    try:
        corpora = generate_synthetic(spec, counts, seed=args.seed,
                                     split_ratios=ratios, overlap=args.overlap,
                                     task_ids=task_ids)
    except ValueError as e:
        raise UsageError(str(e)) from None

    out_dir = prepare_out_dir(args.out, args.force)
    checksums: dict[str, str] = {}
    for task in task_ids:
        for split in ("train", "dev", "test"):
            examples = corpora[task][split]
            name = f"{task}_{split}.tsv"
            if not examples:
                print(f"{name}: empty split, not written")
                continue
            path = out_dir / name
            save_corpus(examples, path)
            checksums[name] = sha256_file(path)
            print(f"wrote {name}: {len(examples)} examples sha256={checksums[name]}")
    (out_dir / "grammar.txt").write_text(spec.serialize(), encoding="utf-8")
    manifest = {
        "version": __version__, "command": "gen-data", "seed": args.seed,
        "grammar": args.grammar, "n": args.n, "splits": args.splits,
        "overlap": args.overlap, "tasks": list(task_ids),
        "sha256": checksums,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for task in task_ids:
        stats = oov_stats(corpora[task]["train"], corpora[task]["test"])
        sizes = " ".join(f"{s}={len(corpora[task][s])}" for s in ("train", "dev", "test"))
        print(f"{task}: {sizes} oov_example_rate={stats['example_rate']:.3f} "
              f"oov_token_rate={stats['token_rate']:.3f}")
    return 0


# ---------- train ----------

def _build_assembly(arch: ArchKind, train_sets, cfg: TrainConfig):
    input_vocab, decoder_vocabs = vocabs_for(train_sets)
    specs = [TaskSpec(t, decoder_vocabs[t]) for t in train_sets]
    if arch is ArchKind.ONE_TO_ONE:
        for s in specs:
            input_vocab.add(s.artificial_token)
    return assemble(arch, specs, cfg.dims, input_vocab, seed=cfg.seed)


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    cfg = config_from_settings(settings)
    if "arch" not in settings:
        raise UsageError("--arch is required (or put arch= in the config file)")
    try:
        arch = ArchKind.parse(settings["arch"])
    except ValueError as e:
        raise UsageError(str(e)) from None

    if args.tasks:
        tasks = [t.strip() for t in args.tasks.split(",") if t.strip()]
        if len(set(tasks)) != len(tasks) or not tasks:
            raise UsageError(f"--tasks has empty or repeated names: {args.tasks!r}")
    else:
        tasks = discover_tasks(args.data)
    train_sets = {t: load_split(args.data, t, "train") for t in tasks}
    asm = _build_assembly(arch, train_sets, cfg)

    if args.params_only:
        print(parameter_report(asm))
        return 0
    if args.out is None:
        raise UsageError("--out is required unless --params-only")

    corpus_files = [split_path(args.data, t, "train") for t in tasks]
    dev_sets = None
    if args.dev_select:
        dev_sets = {t: load_split(args.data, t, "dev") for t in tasks}
        corpus_files += [split_path(args.data, t, "dev") for t in tasks]
    run_dir = prepare_out_dir(args.out, args.force)
    write_manifest(run_dir, command="train", config=cfg, arch=arch,
                   data_dir=args.data, corpus_files=corpus_files,
                   extra={"tasks": tasks, "dev_select": bool(args.dev_select)})

    with open(run_dir / TRAIN_LOG_FILE, "w", encoding="utf-8") as log_file:
        def log_fn(line: str) -> None:
            log_file.write(line + "\n")
            if not args.quiet:
                print(line)
        result = train(asm, train_sets, cfg, dev_corpora=dev_sets, log_fn=log_fn)
    save_run(run_dir, asm)
    skipped = f", {result.skipped_steps} skipped" if result.skipped_steps else ""
    best = f", best_epoch={result.best_epoch}" if result.best_epoch is not None else ""
    print(f"done: {result.steps} steps{skipped}{best}; run saved to {run_dir}")
    return 0


# ---------- eval ----------

def cmd_eval(args) -> int:
    asm = _load_run_checked(args.run)
    tm = _route_checked(asm, args.task)
    examples = load_split(args.data, args.task, args.split)
    report = evaluate(tm, examples, max_len=args.max_len)
    print(report.summary())
    out = Path(args.out) if args.out else Path(args.run) / f"eval_{args.task}_{args.split}.json"
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"report written to {out}")
    return 0


def _load_run_checked(run_dir):
    try:
        return load_run(run_dir)
    except (FileNotFoundError, ValueError) as e:
        raise UsageError(str(e)) from None


def _route_checked(asm, task_id: str):
    try:
        return route_batch(asm, task_id)
    except ValueError as e:
        raise UsageError(str(e)) from None
    except KeyError:
        raise UsageError(f"unknown task {task_id!r}") from None


# ---------- decode ----------

def cmd_decode(args) -> int:
    tokens = args.utterance.split()
    if not tokens:
        raise UsageError("empty utterance")
    asm = _load_run_checked(args.run)
    tm = _route_checked(asm, args.task)
    src = prepare_source(tokens, tm.input_vocab, tm.artificial_token)
    enc = encode(src, tm.net)
    res = greedy_decode(enc, tm.net, tm.embed_vocab, tm.output_vocab,
                        max_len=args.max_len, want_trace=args.trace)
    if res.trace is not None:
        for line in res.trace:
            print(line)
    print(" ".join(postprocess(res.tokens)))
    return 0


# ---------- gradcheck ----------

# Central differences at h=1e-5 on a loss of order one carry absolute rounding
# noise around 1e-11. An entry whose true gradient sits below this floor would
# be compared against that noise, and the relative error metric would report
# garbage no matter how correct the tape is. Points are redrawn until every
# connected entry is measurably large. Exactly-zero entries are fine either
# way: a disconnected parameter moves the loss by exactly nothing, so both
# routes agree at zero.
GRAD_FLOOR = 1e-6

_GRADCHECK_CORPUS = {
    "a": [("red fox runs", "( run fox )"), ("blue fox sits", "( sit fox )")],
    "b": [("red cat naps", "nap : cat")],
}


def build_gradcheck_problem(hidden: int = 16, layers: int = 2):
    """A tiny two-task shared model plus a deterministic batch loss over it.

    Returns (assembly, loss_fn). The loss is the mean teacher-forcing loss of
    task "a"'s two examples, dropout off, so repeated calls are bit-identical.
    """
    train_sets = {
        task: [Example(task, tuple(u.split()), tuple(f.split()), i + 1)
               for i, (u, f) in enumerate(rows)]
        for task, rows in _GRADCHECK_CORPUS.items()
    }
    input_vocab, decoder_vocabs = vocabs_for(train_sets)
    specs = [TaskSpec(t, decoder_vocabs[t]) for t in sorted(train_sets)]
    dims = Dims(embed=hidden, hidden=hidden, attn=hidden, layers=layers)
    asm = assemble(ArchKind.ONE_TO_SHARE_MANY, specs, dims, input_vocab, seed=3)
    tm = route_batch(asm, "a")
    batch = prepare_batch(train_sets["a"], tm.input_vocab, tm.output_vocab,
                          tm.embed_vocab, artificial_token=tm.artificial_token)

    def loss_fn():
        loss, _ = batch_loss(tm, batch, dropout=0.0, rng=None)
        return loss

    return asm, loss_fn


def _corrupted(loss):
    """Identity with a deliberately wrong backward rule, for --inject-fault."""
    out = nc.Tensor(loss.data.copy())

    def backward(g):
        return (g + 1e-3,)

    nc.record(out, (loss,), backward)
    return out


def _min_nonzero_grad(loss_fn, params) -> float:
    nc.zero_grads(params)
    with nc.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    floor = np.inf
    for p in params:
        nonzero = np.abs(p.grad[p.grad != 0.0])
        if nonzero.size:
            floor = min(floor, float(nonzero.min()))
    nc.zero_grads(params)
    return 0.0 if not np.isfinite(floor) else floor


@dataclass
class GradCheckReport:
    result: nc.GradCheckResult
    reinit_seed: int
    min_nonzero_grad: float
    rejected_seeds: list[int]


def gradcheck_model(*, hidden: int = 16, layers: int = 2, start_seed: int = 0,
                    h: float = 1e-5, tol: float = 1e-4,
                    inject_fault: bool = False, max_tries: int = 32,
                    log_fn=None) -> GradCheckReport:
    """Finite-difference check of the full model's tape gradients.

    Parameters are redrawn uniform(-0.5, 0.5) from successive seeds until the
    evaluation point is non-degenerate: every nonzero gradient entry at least
    GRAD_FLOOR in magnitude, so the comparison is meaningful everywhere (see
    the note above GRAD_FLOOR). Every parameter entry is then checked.
    """
    asm, loss_fn = build_gradcheck_problem(hidden=hidden, layers=layers)
    checked_fn = (lambda: _corrupted(loss_fn())) if inject_fault else loss_fn
    params = asm.parameters()
    rejected: list[int] = []
    for attempt in range(max_tries):
        seed = start_seed + attempt
        rng = np.random.default_rng(seed)
        for p in params:
            p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
        floor = _min_nonzero_grad(loss_fn, params)
        if floor >= GRAD_FLOOR:
            break
        rejected.append(seed)
        if log_fn is not None:
            log_fn(f"reinit seed {seed} rejected: min nonzero |grad| "
                   f"{floor:.3e} under {GRAD_FLOOR:.0e}")
    else:
        raise NumericError(f"no non-degenerate evaluation point in {max_tries} "
                           f"reinit seeds from {start_seed}")
    if log_fn is not None:
        log_fn(f"reinit seed {seed} accepted: min nonzero |grad| {floor:.3e}")
    result = nc.grad_check(checked_fn, params, h=h, tol=tol)
    return GradCheckReport(result=result, reinit_seed=seed,
                           min_nonzero_grad=floor, rejected_seeds=rejected)


def cmd_gradcheck(args) -> int:
    report = gradcheck_model(hidden=args.hidden, layers=args.layers,
                             start_seed=args.seed, h=args.h, tol=args.tol,
                             inject_fault=args.inject_fault, log_fn=print)
    print(str(report.result))
    return 0 if report.result.passed else 2


# ---------- experiment ----------

def cmd_experiment(args) -> int:
    settings = resolve_settings(args)
    cfg = config_from_settings(settings)
    try:
        archs = tuple(ArchKind.parse(a.strip()) for a in args.archs.split(","))
    except ValueError as e:
        raise UsageError(str(e)) from None
    if ArchKind.INDEPENDENT not in archs:
        raise UsageError("--archs must include 'independent', the baseline the "
                         "others are compared against")
    try:
        sizes = [int(x) for x in args.sizes.split(",")]
        seeds = [int(x) for x in args.seeds.split(",")]
    except ValueError:
        raise UsageError("--sizes and --seeds need comma-separated integers") from None

    tasks = discover_tasks(args.data)
    if args.target_task not in tasks:
        raise UsageError(f"target task {args.target_task!r} not among {tasks}")
    corpora: dict[str, dict[str, list[Example]]] = {}
    corpus_files = []
    for t in tasks:
        corpora[t] = {"train": load_split(args.data, t, "train")}
        corpus_files.append(split_path(args.data, t, "train"))
        test = load_split(args.data, t, "test", required=(t == args.target_task))
        if test:
            corpora[t]["test"] = test
            corpus_files.append(split_path(args.data, t, "test"))

    out_dir = prepare_out_dir(args.out, args.force)
    write_manifest(out_dir, command="experiment", config=cfg, arch=None,
                   data_dir=args.data, corpus_files=corpus_files,
                   extra={"target_task": args.target_task, "sizes": sizes,
                          "seeds": seeds, "archs": [a.value for a in archs]})
    with open(out_dir / "experiment.log", "w", encoding="utf-8") as log_file:
        def log_fn(line: str) -> None:
            log_file.write(line + "\n")
            if not args.quiet:
                print(line)
        records = run_transfer_experiment(
            corpora, args.target_task, sizes, seeds, cfg, archs=archs,
            runs_path=out_dir / "runs.jsonl", log_fn=log_fn)
    text = format_report(summarize(records))
    (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_report(args) -> int:
    records = load_runs(args.runs)
    if not records:
        raise UsageError(f"no run records in {args.runs}")
    print(format_report(summarize(records)))
    return 0


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiparse",
                     description="attention seq2seq semantic parsing with copying, "
                                 "multi-task parameter sharing, synthetic corpora")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate paired synthetic corpora")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--grammar", default="transfer",
                   help="built-in name (copy, transfer) or a grammar file path")
    p.add_argument("--n", default="500",
                   help="examples per task: one integer or task=count pairs")
    p.add_argument("--tasks", default="tree,flat", help="two task names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default="0.8,0.1,0.1",
                   help="train,dev,test ratios")
    p.add_argument("--overlap", type=float, default=0.0,
                   help="fraction of utterances shared between the tasks")
    p.add_argument("--force", action="store_true",
                   help="write into a nonempty directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a data directory")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", metavar="DIR", help="run directory to create")
    p.add_argument("--arch", choices=[k.value for k in ArchKind])
    p.add_argument("--tasks", help="comma-separated subset of tasks to train on")
    p.add_argument("--dev-select", action="store_true",
                   help="keep the epoch with the best dev exact match")
    p.add_argument("--params-only", action="store_true",
                   help="print the parameter count table and exit")
    p.add_argument("--force", action="store_true",
                   help="write into a nonempty directory")
    p.add_argument("--quiet", action="store_true",
                   help="do not echo the training log to stdout")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained run on a corpus split")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--task", required=True)
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--out", metavar="FILE", help="JSON report path "
                   "(default: eval_<task>_<split>.json in the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode one utterance with a trained run")
    p.add_argument("--run", required=True, metavar="DIR")
    p.add_argument("--task", required=True)
    p.add_argument("--utterance", required=True)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--trace", action="store_true",
                   help="print per-step top-3 action probabilities")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gradcheck",
                       help="compare tape gradients to finite differences")
    p.add_argument("--seed", type=int, default=0,
                   help="first parameter-reinit seed to try")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt one backward rule; the check must then fail")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment",
                       help="low-resource transfer grid over architectures")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--target-task", required=True)
    p.add_argument("--sizes", required=True, help="target train sizes, comma-separated")
    p.add_argument("--seeds", default="1,2,3", help="run seeds, comma-separated")
    p.add_argument("--archs", default=",".join(k.value for k in ArchKind),
                   help="architectures to compare (must include independent)")
    p.add_argument("--force", action="store_true")
    p.add_argument("--quiet", action="store_true")
    add_train_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="reprint the table for saved run records")
    p.add_argument("--runs", required=True, metavar="FILE", help="runs.jsonl path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return 1
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help/--version
        code = e.code
        return 0 if code in (0, None) else 1
    except (NumericError, TrainingDivergence, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
