"""Deterministic synthetic corpus in the published intent-JSON layout.

Used for desk-scale experiments and tests when the real corpus file is not
available. Each intent owns a few dedicated content words; utterances mix
those with shared filler words (plus an occasional confusor word from another
intent) so the task is learnable but not noise-free.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

_ACTIONS = [
    "check", "book", "cancel", "update", "find", "report", "schedule",
    "order", "track", "renew", "compare", "confirm", "reset", "share", "rate",
]
_TOPICS = [
    "balance", "flight", "card", "weather", "playlist", "recipe", "meeting",
    "insurance", "delivery", "account",
]
_FILLERS = [
    "i", "you", "me", "my", "the", "a", "to", "for", "please", "can", "need",
    "want", "would", "like", "now", "today", "about", "what", "is", "how",
    "do", "of", "on", "it",
]
_CONSONANTS = list("bcdfgklmnprstvz")
_VOWELS = list("aeiou")


def _pseudo_words(rng: np.random.Generator, count: int) -> list[str]:
    """Unique pronounceable tokens distinct from fillers and intent names."""
    seen: set[str] = set(_FILLERS)
    words = []
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(
            rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def intent_names(num_intents: int) -> list[str]:
    names = [f"{a}_{t}" for t in _TOPICS for a in _ACTIONS]
    if num_intents > len(names):
        names += [f"intent_{i:03d}" for i in range(len(names), num_intents)]
    return names[:num_intents]


def generate_corpus(
    num_intents: int = 150,
    train_per_intent: int = 100,
    val_per_intent: int = 20,
    test_per_intent: int = 30,
    oos_counts: tuple[int, int, int] = (100, 100, 1000),
    content_words_per_intent: int = 3,
    confusor_rate: float = 0.08,
    seed: int = 7,
) -> dict:
    """Build the six-split corpus dict, deterministically from the seed."""
    rng = np.random.default_rng(seed)
    names = intent_names(num_intents)
    pool = _pseudo_words(rng, num_intents * content_words_per_intent)
    content = {
        name: pool[i * content_words_per_intent : (i + 1) * content_words_per_intent]
        for i, name in enumerate(names)
    }

    def utterance(intent: str) -> str:
        words = list(rng.choice(_FILLERS, size=rng.integers(2, 6)))
        own = content[intent]
        picks = rng.choice(len(own), size=rng.integers(1, len(own) + 1), replace=False)
        words.extend(own[i] for i in picks)
        if rng.random() < confusor_rate and num_intents > 1:
            other = names[rng.integers(0, num_intents)]
            if other != intent:
                words.append(str(rng.choice(content[other])))
        rng.shuffle(words)
        return " ".join(words)

    corpus: dict[str, list[list[str]]] = {}
    for split, per_intent in (("train", train_per_intent), ("val", val_per_intent),
                              ("test", test_per_intent)):
        corpus[split] = [[utterance(name), name] for name in names
                         for _ in range(per_intent)]
    for split, count in zip(("oos_train", "oos_val", "oos_test"), oos_counts):
        corpus[split] = [
            [" ".join(rng.choice(_FILLERS, size=rng.integers(3, 8))), "oos"]
            for _ in range(count)
        ]
    return corpus


def write_corpus(path, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(generate_corpus(**kwargs)), encoding="utf-8")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Write a synthetic intent corpus in the published JSON layout."
    )
    parser.add_argument("--out", required=True, help="output JSON path")
    parser.add_argument("--intents", type=int, default=150)
    parser.add_argument("--train-per-intent", type=int, default=100)
    parser.add_argument("--val-per-intent", type=int, default=20)
    parser.add_argument("--test-per-intent", type=int, default=30)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    path = write_corpus(
        args.out,
        num_intents=args.intents,
        train_per_intent=args.train_per_intent,
        val_per_intent=args.val_per_intent,
        test_per_intent=args.test_per_intent,
        seed=args.seed,
    )
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
