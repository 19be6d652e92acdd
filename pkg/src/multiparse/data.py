"""Vocabulary, corpus files, batch preparation, and synthetic data.

Corpora are UTF-8 text, one example per line, utterance and logical form
separated by a single TAB, tokens separated by single spaces. The synthetic
generator instantiates slot templates with Zipf-distributed entities and
renders each instantiation in two formalisms: a bracketed tree and a flat
field list. Entity surface tokens appear verbatim in the logical forms, so
every slot filler is reachable by the copy mechanism.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)


class Vocabulary:
    """Token <-> id table with four fixed leading entries: PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str] = ()):
        self._tokens: list[str] = list(RESERVED)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            self.add(t)

    # reserved ids are part of the contract, not configuration
    pad_id, bos_id, eos_id, unk_id = 0, 1, 2, 3

    def add(self, token: str) -> int:
        """Append a token if absent; returns its id either way."""
        existing = self._ids.get(token)
        if existing is not None:
            return existing
        if token != token.strip() or any(c.isspace() for c in token) or not token:
            raise ValueError(f"vocabulary tokens must be non-empty and whitespace-free, "
                             f"got {token!r}")
        self._ids[token] = len(self._tokens)
        self._tokens.append(token)
        return self._ids[token]

    def id(self, token: str) -> int | None:
        return self._ids.get(token)

    def id_or_unk(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, i: int) -> str:
        return self._tokens[i]

    def tokens(self) -> tuple[str, ...]:
        return tuple(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @classmethod
    def from_counts(cls, counts: Mapping[str, int], max_size: int | None = None,
                    min_count: int = 1) -> "Vocabulary":
        """Most frequent first, ties broken lexicographically; max_size counts
        the four reserved entries."""
        if max_size is not None and max_size < len(RESERVED):
            raise ValueError(f"max_size must be >= {len(RESERVED)}")
        kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                      key=lambda t: (-counts[t], t))
        if max_size is not None:
            kept = kept[:max_size - len(RESERVED)]
        return cls(kept)

    @classmethod
    def union(cls, vocabs: Iterable["Vocabulary"]) -> "Vocabulary":
        """Merge in first-seen order; reserved entries appear once, up front."""
        out = cls()
        for v in vocabs:
            for t in v.tokens()[len(RESERVED):]:
                out.add(t)
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: not a vocabulary file (bad reserved prefix)")
        return cls(lines[len(RESERVED):])


def build_vocab(examples: Iterable["Example"], max_size: int | None = None,
                min_count: int = 1, side: str = "utterance") -> Vocabulary:
    """Frequency vocabulary over one side of a corpus.

    side is "utterance" or "logical_form"; the latter builds decoder
    vocabularies, where capping size is what forces rare entities onto the
    copy path.
    """
    if side not in ("utterance", "logical_form"):
        raise ValueError(f"build_vocab: unknown side {side!r}")
    counts: Counter[str] = Counter()
    for ex in examples:
        counts.update(ex.utterance if side == "utterance" else ex.logical_form)
    return Vocabulary.from_counts(counts, max_size=max_size, min_count=min_count)


# ---------- corpora ----------

@dataclass(frozen=True)
class Example:
    task_id: str
    utterance: tuple[str, ...]
    logical_form: tuple[str, ...]
    example_id: int  # line number within its corpus file, 1-based


def load_corpus(path, task_id: str) -> tuple[list[Example], list[str]]:
    """Read a TAB-separated corpus. Returns (examples, problem report lines);
    malformed lines are reported with their line numbers, never silently
    dropped. A file with no lines at all is rejected."""
    text = Path(path).read_text(encoding="utf-8")
    if text == "":
        raise ValueError(f"{path}: empty corpus file")
    examples: list[Example] = []
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            problems.append(f"line {lineno}: empty line")
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            problems.append(f"line {lineno}: expected 1 TAB, found {len(parts) - 1}")
            continue
        utt, lf = parts[0].split(), parts[1].split()
        if not utt or not lf:
            problems.append(f"line {lineno}: empty utterance or logical form")
            continue
        examples.append(Example(task_id, tuple(utt), tuple(lf), lineno))
    return examples, problems


def save_corpus(examples: Iterable[Example], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(" ".join(ex.utterance) + "\t" + " ".join(ex.logical_form) + "\n")


# ---------- source preparation ----------

@dataclass
class SourceSeq:
    """One encoder input: reversed, id-mapped, with per-position provenance.

    surface[i] is the original token fed at position i; origin[i] its index
    in the unreversed utterance, or -1 for padding and marker tokens.
    copy_mask excludes padding and marker tokens from the copy action space;
    attn_mask excludes only padding.
    """
    ids: np.ndarray
    surface: tuple[str, ...]
    origin: tuple[int, ...]
    attn_mask: np.ndarray
    copy_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.size)


def prepare_source(tokens: Sequence[str], input_vocab: Vocabulary,
                   artificial_token: str | None = None) -> SourceSeq:
    """Optionally prepend a task marker, then reverse and map to ids.

    The marker is prepended before reversal, so the encoder consumes it
    last; it is attendable but never copyable.
    """
    if not tokens:
        raise ValueError("prepare_source: empty utterance")
    items = [(t, j) for j, t in enumerate(tokens)]  # (surface, original index)
    if artificial_token is not None:
        items = [(artificial_token, -1)] + items
    items.reverse()
    surface = tuple(t for t, _ in items)
    origin = tuple(j for _, j in items)
    ids = np.array([input_vocab.id_or_unk(t) for t, _ in items], dtype=np.intp)
    copy_mask = np.array([j >= 0 for _, j in items])
    return SourceSeq(ids=ids, surface=surface, origin=origin,
                     attn_mask=np.ones(len(items), dtype=bool), copy_mask=copy_mask)


def pad_source(src: SourceSeq, length: int) -> SourceSeq:
    """Right-pad to `length` with PAD ids masked out of attention and copying."""
    extra = length - len(src)
    if extra < 0:
        raise ValueError(f"pad_source: sequence of length {len(src)} exceeds {length}")
    if extra == 0:
        return src
    return SourceSeq(
        ids=np.concatenate([src.ids, np.full(extra, Vocabulary.pad_id, dtype=np.intp)]),
        surface=src.surface + (PAD,) * extra,
        origin=src.origin + (-1,) * extra,
        attn_mask=np.concatenate([src.attn_mask, np.zeros(extra, dtype=bool)]),
        copy_mask=np.concatenate([src.copy_mask, np.zeros(extra, dtype=bool)]),
    )


@dataclass
class Batch:
    """Teacher-forcing view of a group of same-task examples.

    All sources share one padded length; targets include a trailing EOS and
    share another. feed_ids[b, j] is what the decoder reads before
    predicting targets[b][j]: BOS first, then the gold tokens mapped into
    the output embedding vocabulary.
    """
    task_id: str
    examples: list[Example]
    sources: list[SourceSeq]
    src_ids: np.ndarray      # (B, m) int
    attn_mask: np.ndarray    # (B, m) bool
    copy_mask: np.ndarray    # (B, m) bool
    targets: list[tuple[str, ...]]  # gold tokens plus trailing EOS
    tgt_ids: np.ndarray      # (B, n) int, output vocabulary, PAD-padded
    tgt_mask: np.ndarray     # (B, n) bool, True at loss positions
    feed_ids: np.ndarray     # (B, n) int, embedding vocabulary
    skipped: list[str]       # report lines for dropped overlong examples

    def __len__(self) -> int:
        return len(self.examples)


def prepare_batch(examples: Sequence[Example], input_vocab: Vocabulary,
                  output_vocab: Vocabulary, embed_vocab: Vocabulary, *,
                  artificial_token: str | None = None,
                  max_source_len: int | None = None,
                  max_target_len: int | None = None) -> Batch:
    """Build padded id arrays, masks and teacher-forcing feeds for one batch.

    Overlong examples are skipped and reported in Batch.skipped. PAD never
    occupies a loss-contributing target position.
    """
    if not examples:
        raise ValueError("prepare_batch: empty example list")
    kept: list[Example] = []
    skipped: list[str] = []
    marker_len = 1 if artificial_token is not None else 0
    for ex in examples:
        if max_source_len is not None and len(ex.utterance) + marker_len > max_source_len:
            skipped.append(f"example {ex.task_id}:{ex.example_id}: "
                           f"source length {len(ex.utterance)} exceeds {max_source_len}")
            continue
        if max_target_len is not None and len(ex.logical_form) + 1 > max_target_len:
            skipped.append(f"example {ex.task_id}:{ex.example_id}: "
                           f"target length {len(ex.logical_form)} exceeds {max_target_len}")
            continue
        kept.append(ex)
    if not kept:
        raise ValueError("prepare_batch: every example was over the length limit")

    task_id = kept[0].task_id
    for ex in kept:
        if ex.task_id != task_id:
            raise ValueError(f"prepare_batch: mixed tasks {task_id!r} and {ex.task_id!r}")

    sources = [prepare_source(ex.utterance, input_vocab, artificial_token) for ex in kept]
    m = max(len(s) for s in sources)
    sources = [pad_source(s, m) for s in sources]

    targets = [ex.logical_form + (EOS,) for ex in kept]
    n = max(len(t) for t in targets)
    b = len(kept)
    tgt_ids = np.full((b, n), Vocabulary.pad_id, dtype=np.intp)
    tgt_mask = np.zeros((b, n), dtype=bool)
    feed_ids = np.full((b, n), Vocabulary.pad_id, dtype=np.intp)
    for i, tgt in enumerate(targets):
        tgt_ids[i, :len(tgt)] = [output_vocab.id_or_unk(t) for t in tgt]
        tgt_mask[i, :len(tgt)] = True
        feeds = [Vocabulary.bos_id] + [embed_vocab.id_or_unk(t) for t in tgt[:-1]]
        feed_ids[i, :len(feeds)] = feeds

    return Batch(
        task_id=task_id, examples=kept, sources=sources,
        src_ids=np.stack([s.ids for s in sources]),
        attn_mask=np.stack([s.attn_mask for s in sources]),
        copy_mask=np.stack([s.copy_mask for s in sources]),
        targets=targets, tgt_ids=tgt_ids, tgt_mask=tgt_mask, feed_ids=feed_ids,
        skipped=skipped,
    )


# ---------- grammar ----------

@dataclass(frozen=True)
class Template:
    """Utterance pattern with two logical form renderings. Slot tokens start
    with '$' and name an entity type."""
    utterance: tuple[str, ...]
    tree_form: tuple[str, ...]
    flat_form: tuple[str, ...]

    @classmethod
    def parse(cls, line: str) -> "Template":
        parts = [p.strip() for p in line.split("|||")]
        if len(parts) != 3:
            raise ValueError(f"template needs 'utterance ||| tree ||| flat', got {line!r}")
        return cls(*(tuple(p.split()) for p in parts))

    def slots(self) -> tuple[str, ...]:
        return tuple(t[1:] for t in self.utterance if t.startswith("$"))


@dataclass
class GrammarSpec:
    templates: list[Template]
    entities: dict[str, tuple[str, ...]]  # type -> surface forms, rank order

    def validate(self) -> None:
        """Reject grammars whose logical forms mention tokens the utterance
        cannot supply, naming the offending template."""
        if not self.templates:
            raise ValueError("grammar has no templates")
        for idx, t in enumerate(self.templates, start=1):
            label = f"template {idx} ({' '.join(t.utterance)!r})"
            utt_slots = t.slots()
            if len(set(utt_slots)) != len(utt_slots):
                raise ValueError(f"{label}: repeated slot in utterance")
            for side_name, side in (("tree", t.tree_form), ("flat", t.flat_form)):
                for tok in side:
                    if tok.startswith("$") and tok[1:] not in utt_slots:
                        raise ValueError(f"{label}: slot {tok} in {side_name} form "
                                         "is missing from the utterance")
            for slot in utt_slots:
                if slot not in self.entities:
                    raise ValueError(f"{label}: no entity list for slot ${slot}")
                if not self.entities[slot]:
                    raise ValueError(f"{label}: entity list for ${slot} is empty")

    def serialize(self) -> str:
        lines = []
        for t in self.templates:
            lines.append("template: " + " ||| ".join(
                " ".join(side) for side in (t.utterance, t.tree_form, t.flat_form)))
        for name in self.entities:
            lines.append(f"entity: {name} = " + " ; ".join(self.entities[name]))
        return "\n".join(lines) + "\n"


def parse_grammar(text: str, base_dir: Path | None = None) -> GrammarSpec:
    """Parse the grammar config format:

        # comment
        template: play $song by $artist ||| ( play ( song $song ) ) ||| ...
        entity: song = blue line ; zor kel ; ...
        entity_file: person = names.txt        (one entity per line)
    """
    templates: list[Template] = []
    entities: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            key, _, rest = line.partition(":")
            key = key.strip()
            if key == "template":
                templates.append(Template.parse(rest))
            elif key in ("entity", "entity_file"):
                name, _, value = rest.partition("=")
                name, value = name.strip(), value.strip()
                if not name or not value:
                    raise ValueError("expected 'name = value'")
                if key == "entity":
                    entities[name] = tuple(e.strip() for e in value.split(";") if e.strip())
                else:
                    path = Path(value)
                    if base_dir is not None and not path.is_absolute():
                        path = base_dir / path
                    entities[name] = tuple(
                        ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()
                        if ln.strip())
            else:
                raise ValueError(f"unknown directive {key!r}")
        except ValueError as e:
            raise ValueError(f"grammar line {lineno}: {e}") from None
    spec = GrammarSpec(templates, entities)
    spec.validate()
    return spec


def load_grammar(path) -> GrammarSpec:
    p = Path(path)
    return parse_grammar(p.read_text(encoding="utf-8"), base_dir=p.parent)


# ---------- built-in grammars ----------

_SYLLABLES = ("ba", "ce", "do", "fen", "gil", "hok", "jun", "kel", "lom", "mir",
              "nup", "ost", "pra", "quen", "rud", "sev", "tol", "umb", "vat",
              "wex", "yil", "zor")


def _name_pool(offset: int, count: int) -> tuple[str, ...]:
    """Deterministic pronounceable names: all 2-syllable combinations, then
    3-syllable ones, sliced from `offset`."""
    names = []
    need = offset + count
    for a in _SYLLABLES:
        for b in _SYLLABLES:
            names.append(a + b)
            if len(names) >= need:
                return tuple(names[offset:])
    for a in _SYLLABLES:
        for b in _SYLLABLES:
            for c in _SYLLABLES:
                names.append(a + b + c)
                if len(names) >= need:
                    return tuple(names[offset:])
    raise ValueError("name pool exhausted")


def copy_task_grammar() -> GrammarSpec:
    """Small grammar whose logical forms are dominated by copied entities."""
    templates = [
        "play $song by $artist ||| ( play ( song $song ) ( artist $artist ) ) "
        "||| intent : play | song : $song | artist : $artist",
        "play $song ||| ( play ( song $song ) ) ||| intent : play | song : $song",
        "who is $person ||| ( ask ( person $person ) ) ||| intent : ask | person : $person",
        "call $person now ||| ( call ( person $person ) ) ||| intent : call | person : $person",
        "weather in $place ||| ( weather ( place $place ) ) ||| intent : weather | place : $place",
        "navigate to $place ||| ( route ( place $place ) ) ||| intent : route | place : $place",
    ]
    spec = GrammarSpec(
        templates=[Template.parse(t) for t in templates],
        entities={
            "song": _name_pool(0, 400),
            "artist": _name_pool(400, 400),
            "person": _name_pool(800, 400),
            "place": _name_pool(1200, 400),
        },
    )
    spec.validate()
    return spec


def transfer_grammar() -> GrammarSpec:
    """Wider grammar for the cross-task transfer study.

    Sized so that structure, not entity recall, is what a small corpus
    fails to learn: forty templates over twenty intents with optional
    modifier groups, but compact entity pools (sixty names per type) that
    keep the decoder vocabularies small. The two renderings share all
    content tokens and differ in their structural inventory.
    """
    templates = [
        "play $song ||| ( play ( song $song ) ) ||| intent : play | song : $song",
        "play $song by $artist ||| ( play ( song $song ) ( artist $artist ) ) "
        "||| intent : play | song : $song | artist : $artist",
        "play the album $album ||| ( play ( album $album ) ) ||| intent : play | album : $album",
        "play $song from $album ||| ( play ( song $song ) ( album $album ) ) "
        "||| intent : play | song : $song | album : $album",
        "queue $song next ||| ( queue ( song $song ) ) ||| intent : queue | song : $song",
        "queue the album $album ||| ( queue ( album $album ) ) ||| intent : queue | album : $album",
        "skip this song ||| ( skip ) ||| intent : skip",
        "who is $person ||| ( ask ( person $person ) ) ||| intent : ask | person : $person",
        "who sings $song ||| ( ask ( song $song ) ( field artist ) ) "
        "||| intent : ask | song : $song | field : artist",
        "call $person ||| ( call ( person $person ) ) ||| intent : call | person : $person",
        "call $person at home ||| ( call ( person $person ) ( line home ) ) "
        "||| intent : call | person : $person | line : home",
        "message $person i am late ||| ( message ( person $person ) ( body late ) ) "
        "||| intent : message | person : $person | body : late",
        "message $person call me ||| ( message ( person $person ) ( body callback ) ) "
        "||| intent : message | person : $person | body : callback",
        "where is $place ||| ( locate ( place $place ) ) ||| intent : locate | place : $place",
        "where is $person ||| ( locate ( person $person ) ) ||| intent : locate | person : $person",
        "weather in $place ||| ( weather ( place $place ) ) ||| intent : weather | place : $place",
        "forecast for $place tomorrow ||| ( weather ( place $place ) ( when tomorrow ) ) "
        "||| intent : weather | place : $place | when : tomorrow",
        "will it rain in $place ||| ( weather ( place $place ) ( field rain ) ) "
        "||| intent : weather | place : $place | field : rain",
        "navigate to $place ||| ( route ( place $place ) ) ||| intent : route | place : $place",
        "walk me to $place ||| ( route ( place $place ) ( mode walking ) ) "
        "||| intent : route | place : $place | mode : walking",
        "drive to $place avoiding tolls ||| ( route ( place $place ) ( avoid tolls ) ) "
        "||| intent : route | place : $place | avoid : tolls",
        "order some $food ||| ( order ( food $food ) ) ||| intent : order | food : $food",
        "order $food for two ||| ( order ( food $food ) ( qty two ) ) "
        "||| intent : order | food : $food | qty : two",
        "how do you make $food ||| ( recipe ( food $food ) ) ||| intent : recipe | food : $food",
        "add $food to my list ||| ( list_add ( food $food ) ) ||| intent : list_add | food : $food",
        "remove $food from my list ||| ( list_drop ( food $food ) ) "
        "||| intent : list_drop | food : $food",
        "set a dinner timer ||| ( timer ( label dinner ) ) ||| intent : timer | label : dinner",
        "set an alarm for seven ||| ( alarm ( when seven ) ) ||| intent : alarm | when : seven",
        "wake me at six ||| ( alarm ( when six ) ) ||| intent : alarm | when : six",
        "what time is it ||| ( clock ) ||| intent : clock",
        "turn the volume up ||| ( volume ( dir up ) ) ||| intent : volume | dir : up",
        "turn the volume down ||| ( volume ( dir down ) ) ||| intent : volume | dir : down",
        "lights on in the $room ||| ( lights ( room $room ) ( state on ) ) "
        "||| intent : lights | room : $room | state : on",
        "lights off in the $room ||| ( lights ( room $room ) ( state off ) ) "
        "||| intent : lights | room : $room | state : off",
        "dim the $room lights ||| ( lights ( room $room ) ( state dim ) ) "
        "||| intent : lights | room : $room | state : dim",
        "news about $topic ||| ( news ( topic $topic ) ) ||| intent : news | topic : $topic",
        "any news from $place ||| ( news ( place $place ) ) ||| intent : news | place : $place",
        "stock price of $company ||| ( stock ( company $company ) ) "
        "||| intent : stock | company : $company",
        "remind me to call $person tomorrow "
        "||| ( remind ( action call ) ( person $person ) ( when tomorrow ) ) "
        "||| intent : remind | action : call | person : $person | when : tomorrow",
        "how do you say $food in $language ||| ( translate ( term $food ) ( language $language ) ) "
        "||| intent : translate | term : $food | language : $language",
    ]
    pool_names = ("song", "artist", "album", "person", "place", "food",
                  "room", "topic", "company", "language")
    spec = GrammarSpec(
        templates=[Template.parse(t) for t in templates],
        entities={name: _name_pool(60 * i, 60)
                  for i, name in enumerate(pool_names)},
    )
    spec.validate()
    return spec


BUILTIN_GRAMMARS = {"copy": copy_task_grammar, "transfer": transfer_grammar}


# ---------- synthetic generation ----------

def _zipf_probs(n: int) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    p = 1.0 / ranks
    return p / p.sum()


def _instantiate(template: Template, spec: GrammarSpec,
                 rng: np.random.Generator) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    fillers = {}
    for slot in template.slots():
        pool = spec.entities[slot]
        fillers[slot] = pool[rng.choice(len(pool), p=_zipf_probs(len(pool)))]

    def render(side):
        out = []
        for tok in side:
            if tok.startswith("$"):
                out.extend(fillers[tok[1:]].split())
            else:
                out.append(tok)
        return tuple(out)

    return render(template.utterance), render(template.tree_form), render(template.flat_form)


def _split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three nonnegative values summing to 1, "
                         f"got {ratios}")
    n_train = int(round(n * ratios[0]))
    n_dev = int(round(n * ratios[1]))
    n_train = min(n_train, n)
    n_dev = min(n_dev, n - n_train)
    return [n_train, n_dev, n - n_train - n_dev]


def generate_synthetic(spec: GrammarSpec, n_per_task, seed: int,
                       split_ratios: Sequence[float] = (0.8, 0.1, 0.1),
                       overlap: float = 0.0,
                       task_ids: tuple[str, str] = ("tree", "flat"),
                       ) -> dict[str, dict[str, list[Example]]]:
    """Deterministic paired corpora: every instantiated utterance is rendered
    in the tree formalism for task_ids[0] and the flat one for task_ids[1].

    `overlap` in [0, 1] controls the fraction of the smaller task whose
    utterances also appear in the other task; splits within a task are
    disjoint at the utterance level by construction (instantiations are
    deduplicated globally).
    """
    spec.validate()
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must be in [0, 1], got {overlap}")
    if isinstance(n_per_task, int):
        wanted = {task_ids[0]: n_per_task, task_ids[1]: n_per_task}
    else:
        wanted = dict(n_per_task)
        if set(wanted) != set(task_ids):
            raise ValueError(f"n_per_task names {sorted(wanted)}, expected {sorted(task_ids)}")
    n_a, n_b = wanted[task_ids[0]], wanted[task_ids[1]]
    if min(n_a, n_b) < 1:
        raise ValueError("each task needs at least one example")
    n_shared = int(round(overlap * min(n_a, n_b)))
    n_unique = n_a + n_b - n_shared

    rng = np.random.default_rng(seed)
    seen: set[tuple[str, ...]] = set()
    pool: list[tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]] = []
    attempts = 0
    limit = 200 * n_unique + 1000
    while len(pool) < n_unique:
        attempts += 1
        if attempts > limit:
            raise ValueError(f"grammar cannot produce {n_unique} distinct utterances "
                             f"(got {len(pool)} after {attempts} draws)")
        t = spec.templates[rng.choice(len(spec.templates))]
        utt, tree, flat = _instantiate(t, spec, rng)
        if utt in seen:
            continue
        seen.add(utt)
        pool.append((utt, tree, flat))

    shared = pool[:n_shared]
    only_a = pool[n_shared:n_shared + (n_a - n_shared)]
    only_b = pool[n_shared + (n_a - n_shared):]

    out: dict[str, dict[str, list[Example]]] = {}
    for task, items, form in ((task_ids[0], shared + only_a, 1),
                              (task_ids[1], shared + only_b, 2)):
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        sizes = _split_sizes(len(shuffled), split_ratios)
        splits: dict[str, list[Example]] = {}
        start = 0
        for split_name, size in zip(("train", "dev", "test"), sizes):
            chunk = shuffled[start:start + size]
            start += size
            splits[split_name] = [Example(task, item[0], item[form], i + 1)
                                  for i, item in enumerate(chunk)]
        out[task] = splits
    return out


def oov_stats(train: Sequence[Example], test: Sequence[Example]) -> dict[str, float]:
    """How much of the test split needs tokens never seen in training.

    example_rate: fraction of test examples with at least one unseen
    utterance token; token_rate: fraction of test utterance tokens unseen.
    """
    seen: set[str] = set()
    for ex in train:
        seen.update(ex.utterance)
    hit_examples = 0
    oov_tokens = 0
    total_tokens = 0
    for ex in test:
        unseen = [t for t in ex.utterance if t not in seen]
        total_tokens += len(ex.utterance)
        oov_tokens += len(unseen)
        if unseen:
            hit_examples += 1
    n = max(len(test), 1)
    return {"example_rate": hit_examples / n,
            "token_rate": oov_tokens / max(total_tokens, 1)}
