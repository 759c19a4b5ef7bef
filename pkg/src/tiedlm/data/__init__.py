"""Bundled desk-scale corpus.

``tiny/`` holds a synthetic corpus of about 50k tokens produced by
:func:`generate_tiny_corpus`.  Words fall into classes that behave alike
(a sparse class-level Markov chain emits each word from a Zipfian
distribution over its class), so similar words genuinely share contexts.
The word ``a`` is always followed by ``b``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

TINY_DIR = Path(__file__).resolve().parent / "tiny"

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


def tiny_corpus_dir() -> Path:
    return TINY_DIR


def _pseudowords(n, rng):
    syllables = [o + v for o in _ONSETS for v in _VOWELS]
    words = set()
    out = []
    while len(out) < n:
        k = rng.integers(2, 4)
        w = "".join(syllables[i] for i in rng.integers(0, len(syllables), k))
        if w not in words:
            words.add(w)
            out.append(w)
    return out


def generate_tiny_corpus(seed=2017, num_classes=40, words_per_class=25,
                         sizes=(40000, 5000, 5000), bigram_rate=0.02):
    """Return ``{"train": text, "valid": text, "test": text}``."""
    rng = np.random.default_rng(seed)
    vocab = _pseudowords(num_classes * words_per_class, rng)
    classes = [vocab[c * words_per_class:(c + 1) * words_per_class] for c in range(num_classes)]
    zipf = 1.0 / np.arange(1, words_per_class + 1)
    zipf /= zipf.sum()
    trans = np.zeros((num_classes, num_classes))
    for c in range(num_classes):
        succ = rng.choice(num_classes, size=4, replace=False)
        trans[c, succ] = rng.dirichlet(np.ones(4))
    start = rng.dirichlet(np.ones(num_classes))

    def sentence():
        words = []
        c = rng.choice(num_classes, p=start)
        for _ in range(int(rng.integers(6, 19))):
            if rng.random() < bigram_rate:
                words += ["a", "b"]
            else:
                words.append(classes[c][rng.choice(words_per_class, p=zipf)])
            c = rng.choice(num_classes, p=trans[c])
        return " ".join(words)

    out = {}
    for name, size in zip(("train", "valid", "test"), sizes):
        lines = []
        count = 0
        while count < size:
            s = sentence()
            lines.append(s)
            count += len(s.split()) + 1
        out[name] = "\n".join(lines) + "\n"
    return out


def write_tiny_corpus(directory=TINY_DIR, **kwargs):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in generate_tiny_corpus(**kwargs).items():
        (directory / f"{name}.txt").write_text(text, encoding="utf-8")
    return directory
