"""Corpus ingestion, tokenization, and construction of label-disjoint tasks.

The input corpus is the published intent-classification JSON layout: top-level
keys ``train``/``val``/``test`` plus ``oos_train``/``oos_val``/``oos_test``,
each a list of ``[text, intent-name]`` pairs. Out-of-scope entries are dropped
on load. The vocabulary is built from the training split only, with whitespace
tokens ordered by descending frequency then lexicographically.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DataError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MAX_LEN_DEFAULT = 64

FULL_SPLIT_SIZES = {"train": 15000, "val": 3000, "test": 4500}

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_SPACE_RE = re.compile(r"\s+")


def preprocess(text: str) -> str:
    """Lowercase, strip URLs, and collapse whitespace runs. Idempotent."""
    text = _URL_RE.sub(" ", text.lower())
    return _SPACE_RE.sub(" ", text).strip()


@dataclass(frozen=True)
class Vocabulary:
    """Dense token -> id map with reserved pad and unk entries."""

    token_to_id: dict[str, int]
    pad_id: int
    unk_id: int

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def ordered_tokens(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.get)

    def content_hash(self) -> str:
        payload = json.dumps(self.ordered_tokens(), ensure_ascii=False).encode()
        return hashlib.sha256(payload).hexdigest()

    @staticmethod
    def from_tokens(tokens: list[str]) -> "Vocabulary":
        return Vocabulary({t: i for i, t in enumerate(tokens)},
                          pad_id=tokens.index(PAD_TOKEN), unk_id=tokens.index(UNK_TOKEN))


def build_vocab(texts: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Whitespace vocabulary over a corpus; ids 0/1 are pad/unk."""
    counts: dict[str, int] = {}
    for text in texts:
        for token in text.split():
            counts[token] = counts.get(token, 0) + 1
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens([PAD_TOKEN, UNK_TOKEN] + kept)


def tokenize(text: str, vocab: Vocabulary, max_len: int = MAX_LEN_DEFAULT):
    """Map whitespace tokens to ids, truncated/padded to ``max_len``.

    Returns (token_ids, attention_mask) int64/float64 arrays of length
    ``max_len``; the mask flags real tokens with 1.
    """
    tokens = text.split()[:max_len]
    ids = np.full(max_len, vocab.pad_id, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.float64)
    for i, token in enumerate(tokens):
        ids[i] = vocab.id_for(token)
        mask[i] = 1.0
    return ids, mask


@dataclass
class Utterance:
    text: str
    label_id: int
    token_ids: np.ndarray
    attention_mask: np.ndarray


@dataclass
class TaskDataset:
    task_index: int  # 1-based position in the training sequence
    label_set: set[int]
    train: list[Utterance]
    val: list[Utterance]
    test: list[Utterance]

    def split(self, name: str) -> list[Utterance]:
        return getattr(self, name)


def stack_utterances(utterances: list[Utterance]):
    """Stack a split into (ids, mask, labels) arrays for batched forwards."""
    if not utterances:
        raise DataError("empty utterance list")
    ids = np.stack([u.token_ids for u in utterances])
    mask = np.stack([u.attention_mask for u in utterances])
    labels = np.array([u.label_id for u in utterances], dtype=np.int64)
    return ids, mask, labels


def load_clinc150(path) -> dict[str, list[tuple[str, str]]]:
    """Read the published full-JSON corpus, discarding out-of-scope entries.

    Split sizes are validated against the full-corpus counts (15000/3000/4500)
    with a warning, not an error, so reduced fixtures stay loadable.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"corpus is not valid JSON: {exc}") from exc
    required = {"train", "val", "test", "oos_train", "oos_val", "oos_test"}
    missing = required - set(raw)
    if missing:
        raise DataError(f"corpus is missing keys: {sorted(missing)}")
    splits: dict[str, list[tuple[str, str]]] = {}
    for name in ("train", "val", "test"):
        pairs = []
        for entry in raw[name]:
            if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                    or not isinstance(entry[0], str) or not isinstance(entry[1], str)):
                raise DataError(f"malformed [text, intent] pair in split {name!r}: {entry!r}")
            pairs.append((entry[0], entry[1]))
        splits[name] = pairs
        expected = FULL_SPLIT_SIZES[name]
        if len(pairs) != expected:
            warnings.warn(
                f"split {name!r} has {len(pairs)} in-scope utterances, expected {expected}",
                stacklevel=2,
            )
    return splits


def encode_labels(intent_names: Iterable[str]) -> dict[str, int]:
    """Stable dense ids: sorted unique names -> 0..n-1."""
    return {name: i for i, name in enumerate(sorted(set(intent_names)))}


def construct_tasks(
    splits: dict[str, list[tuple[str, int]]],
    vocab: Vocabulary,
    num_tasks: int,
    seed: int,
    max_len: int = MAX_LEN_DEFAULT,
) -> list[TaskDataset]:
    """Partition the label set into ``num_tasks`` disjoint groups and filter.

    ``splits`` maps split name to (preprocessed text, label_id) pairs. Labels
    are shuffled by ``seed`` and chunked into equal groups; each task keeps
    only its own labels in every split.
    """
    labels = sorted({label for pairs in splits.values() for _, label in pairs})
    if not labels:
        raise DataError("no labelled examples to partition")
    if len(labels) % num_tasks != 0:
        raise ConfigError(
            f"{num_tasks} tasks do not evenly divide {len(labels)} labels"
        )
    order = np.array(labels)
    np.random.default_rng(seed).shuffle(order)
    per_task = len(labels) // num_tasks
    groups = [set(map(int, order[i * per_task : (i + 1) * per_task]))
              for i in range(num_tasks)]

    tokenized: dict[str, list[Utterance]] = {}
    for name, pairs in splits.items():
        rows = []
        for text, label in pairs:
            ids, mask = tokenize(text, vocab, max_len)
            if mask.sum() == 0:
                raise DataError(f"utterance tokenized to nothing: {text!r}")
            rows.append(Utterance(text, label, ids, mask))
        tokenized[name] = rows

    tasks = []
    for t, group in enumerate(groups, start=1):
        tasks.append(TaskDataset(
            task_index=t,
            label_set=group,
            train=[u for u in tokenized["train"] if u.label_id in group],
            val=[u for u in tokenized["val"] if u.label_id in group],
            test=[u for u in tokenized["test"] if u.label_id in group],
        ))
    return tasks


def subsample_train(tasks: list[TaskDataset], per_class: int, seed: int) -> list[TaskDataset]:
    """Keep at most ``per_class`` training utterances per label; val/test stay full.

    Selection is seeded per (seed, task, label) so all strategy cells sharing a
    seed train on identical subsets.
    """
    if per_class < 1:
        raise ConfigError("subset size must be >= 1")
    reduced = []
    for task in tasks:
        kept: list[Utterance] = []
        for label in sorted(task.label_set):
            rows = [u for u in task.train if u.label_id == label]
            if len(rows) > per_class:
                rng = np.random.default_rng([seed, task.task_index, label])
                idx = sorted(rng.choice(len(rows), size=per_class, replace=False))
                rows = [rows[i] for i in idx]
            kept.extend(rows)
        reduced.append(TaskDataset(task.task_index, task.label_set, kept,
                                   task.val, task.test))
    return reduced


@dataclass
class PreparedData:
    tasks: list[TaskDataset]
    vocab: Vocabulary
    label_to_id: dict[str, int]


def prepare_tasks(
    raw_splits: dict[str, list[tuple[str, str]]],
    num_tasks: int,
    seed: int,
    min_freq: int = 1,
    max_len: int = MAX_LEN_DEFAULT,
    subset_per_class: Optional[int] = None,
) -> PreparedData:
    """Full pipeline: preprocess, vocabulary, label encoding, task construction."""
    clean = {
        name: [(preprocess(text), intent) for text, intent in pairs]
        for name, pairs in raw_splits.items()
    }
    label_to_id = encode_labels(
        intent for pairs in clean.values() for _, intent in pairs
    )
    vocab = build_vocab((text for text, _ in clean["train"]), min_freq=min_freq)

    def encoded(pairs):
        out = []
        for text, intent in pairs:
            if intent not in label_to_id:
                raise DataError(f"unknown intent name: {intent!r}")
            out.append((text, label_to_id[intent]))
        return out

    splits = {name: encoded(pairs) for name, pairs in clean.items()}
    tasks = construct_tasks(splits, vocab, num_tasks, seed, max_len)
    if subset_per_class is not None:
        tasks = subsample_train(tasks, subset_per_class, seed)
    return PreparedData(tasks, vocab, label_to_id)


# ---------------------------------------------------------------------------
# on-disk task cache


def write_task_cache(prepared: PreparedData, out_dir, seed: int, max_len: int,
                     min_freq: int, subset_per_class: Optional[int]) -> Path:
    """Persist tasks as JSONL plus a manifest; byte-stable for identical inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for task in prepared.tasks:
        for split in ("train", "val", "test"):
            path = out / f"task_{task.task_index:02d}.{split}.jsonl"
            with path.open("w", encoding="utf-8") as fh:
                for u in task.split(split):
                    fh.write(json.dumps({
                        "text": u.text,
                        "label_id": int(u.label_id),
                        "token_ids": [int(i) for i in u.token_ids],
                        "mask": [int(m) for m in u.attention_mask],
                    }, ensure_ascii=False) + "\n")
    (out / "vocab.json").write_text(
        json.dumps({"tokens": prepared.vocab.ordered_tokens(),
                    "pad_id": prepared.vocab.pad_id,
                    "unk_id": prepared.vocab.unk_id}, ensure_ascii=False),
        encoding="utf-8",
    )
    manifest = {
        "version": 1,
        "seed": seed,
        "num_tasks": len(prepared.tasks),
        "max_len": max_len,
        "min_freq": min_freq,
        "subset_per_class": subset_per_class,
        "num_labels": len(prepared.label_to_id),
        "label_to_id": prepared.label_to_id,
        "label_sets": [sorted(task.label_set) for task in prepared.tasks],
        "counts": {
            split: sum(len(task.split(split)) for task in prepared.tasks)
            for split in ("train", "val", "test")
        },
        "per_task_counts": [
            {split: len(task.split(split)) for split in ("train", "val", "test")}
            for task in prepared.tasks
        ],
        "vocab_size": len(prepared.vocab),
        "vocab_hash": prepared.vocab.content_hash(),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True),
                             encoding="utf-8")
    return manifest_path


def load_task_cache(cache_dir) -> tuple[PreparedData, dict]:
    cache = Path(cache_dir)
    manifest_path = cache / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {cache}; run prepare first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    vocab_raw = json.loads((cache / "vocab.json").read_text(encoding="utf-8"))
    vocab = Vocabulary.from_tokens(vocab_raw["tokens"])
    label_sets = [set(s) for s in manifest["label_sets"]]
    tasks = []
    for t, label_set in enumerate(label_sets, start=1):
        splits = {}
        for split in ("train", "val", "test"):
            path = cache / f"task_{t:02d}.{split}.jsonl"
            if not path.exists():
                raise DataError(f"missing cache file {path}")
            rows = []
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    obj = json.loads(line)
                    rows.append(Utterance(
                        obj["text"], obj["label_id"],
                        np.asarray(obj["token_ids"], dtype=np.int64),
                        np.asarray(obj["mask"], dtype=np.float64),
                    ))
            splits[split] = rows
        tasks.append(TaskDataset(t, label_set, splits["train"], splits["val"],
                                 splits["test"]))
    label_to_id = {name: int(i) for name, i in manifest["label_to_id"].items()}
    return PreparedData(tasks, vocab, label_to_id), manifest
