"""Run directories: manifest, model description, vocabularies, parameters.

A training run leaves behind everything needed to rebuild the model and
reproduce the run: manifest.json (resolved config, seeds, corpus checksums,
code version; written before training starts), model.json (architecture,
dims, task wiring), one vocabulary file per table, params.bin, train.log.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .data import Vocabulary
from .model import Dims
from .multitask import ArchKind, ModelAssembly, TaskSpec, assemble
from .tensor import load_params, restore_params, save_params
from .training import TrainConfig

MANIFEST_FILE = "manifest.json"
MODEL_FILE = "model.json"
PARAMS_FILE = "params.bin"
TRAIN_LOG_FILE = "train.log"
INPUT_VOCAB_FILE = "input_vocab.txt"


def task_vocab_file(task_id: str) -> str:
    return f"vocab_{task_id}.txt"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(run_dir, *, command: str, config: TrainConfig,
                   arch: ArchKind | None, data_dir, corpus_files,
                   extra: dict | None = None) -> Path:
    """Record how a run was invoked, before it starts doing anything."""
    run_dir = Path(run_dir)
    manifest = {
        "version": __version__,
        "command": command,
        "config": config.to_dict(),
        "arch": arch.value if arch is not None else None,
        "data_dir": str(data_dir),
        "corpus_sha256": {str(Path(p).name): sha256_file(p)
                          for p in sorted(corpus_files)},
        "outputs": {
            "model": MODEL_FILE, "params": PARAMS_FILE,
            "train_log": TRAIN_LOG_FILE,
        },
    }
    if extra:
        manifest.update(extra)
    path = run_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def save_run(run_dir, asm: ModelAssembly) -> None:
    """Write the model description, vocabularies and parameters of a run."""
    run_dir = Path(run_dir)
    model = {
        "arch": asm.arch.value,
        "dims": asm.dims.to_dict(),
        "tasks": [{"task_id": t.task_id, "artificial_token": t.artificial_token}
                  for t in asm.tasks],
        "input_vocab": INPUT_VOCAB_FILE,
        "task_vocabs": {t.task_id: task_vocab_file(t.task_id) for t in asm.tasks},
    }
    (run_dir / MODEL_FILE).write_text(
        json.dumps(model, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    asm.input_vocab.save(run_dir / INPUT_VOCAB_FILE)
    for t in asm.tasks:
        t.decoder_vocab.save(run_dir / task_vocab_file(t.task_id))
    save_params(asm.parameters(), run_dir / PARAMS_FILE)


def load_run(run_dir) -> ModelAssembly:
    """Rebuild the assembly saved by save_run, parameters included."""
    run_dir = Path(run_dir)
    model_path = run_dir / MODEL_FILE
    if not model_path.exists():
        raise FileNotFoundError(f"{model_path} not found; not a run directory?")
    model = json.loads(model_path.read_text(encoding="utf-8"))
    arch = ArchKind.parse(model["arch"])
    dims = Dims(**model["dims"])
    input_vocab = Vocabulary.load(run_dir / model["input_vocab"])
    tasks = []
    for entry in model["tasks"]:
        vocab = Vocabulary.load(run_dir / model["task_vocabs"][entry["task_id"]])
        tasks.append(TaskSpec(entry["task_id"], vocab,
                              artificial_token=entry["artificial_token"]))
    asm = assemble(arch, tasks, dims, input_vocab, seed=0)
    restore_params(asm.parameters(), load_params(run_dir / PARAMS_FILE))
    return asm


def load_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / MANIFEST_FILE).read_text(encoding="utf-8"))
