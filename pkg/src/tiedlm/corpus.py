"""Corpus loading, vocabulary construction and BPTT batching.

Files are whitespace-tokenized text with one sentence per line, as in the
Mikolov-processed Penn Treebank and in Wikitext-2.  An ``<eos>`` token is
appended to every line.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import child_rng

UNK = "<unk>"
EOS = "<eos>"


class CorpusError(ValueError):
    pass


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")
        for tok in (UNK, EOS):
            if tok not in self.token_to_id:
                raise CorpusError(f"vocabulary lacks reserved token {tok}")

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    def __len__(self):
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    @classmethod
    def from_counts(cls, counts: Counter, max_size: int | None = None) -> "Vocabulary":
        """Most frequent tokens first, ties broken lexicographically."""
        counts = Counter(counts)
        for tok in (UNK, EOS):
            counts.setdefault(tok, 0)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None and len(ordered) > max_size:
            kept = [t for t in ordered if t not in (UNK, EOS)][: max_size - 2]
            keep = set(kept) | {UNK, EOS}
            ordered = [t for t in ordered if t in keep]
        return cls(ordered)

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1])


@dataclass(frozen=True)
class TokenStream:
    ids: np.ndarray
    source_split: str = "train"

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class BpttBatch:
    inputs: np.ndarray  # batch x steps
    targets: np.ndarray  # batch x steps

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    @property
    def steps(self) -> int:
        return self.inputs.shape[1]


def read_tokens(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    tokens = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            tokens.extend(line.split())
            tokens.append(EOS)
    return tokens


def load_corpus(path, vocab: Vocabulary | None = None, split: str = "train",
                max_vocab: int | None = None) -> tuple[TokenStream, Vocabulary]:
    """Read a corpus file into ids.

    Without ``vocab`` the vocabulary is built from this file.  With one, tokens
    outside it map to ``<unk>``.
    """
    tokens = read_tokens(path)
    if not tokens:
        raise CorpusError(f"empty corpus: {path}")
    if vocab is None:
        vocab = Vocabulary.from_counts(Counter(tokens), max_size=max_vocab)
    return TokenStream(vocab.encode(tokens), split), vocab


def load_splits(directory, max_vocab=None) -> tuple[dict[str, TokenStream], Vocabulary]:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` (when present)."""
    directory = Path(directory)
    train, vocab = load_corpus(directory / "train.txt", split="train", max_vocab=max_vocab)
    streams = {"train": train}
    for name in ("valid", "test"):
        p = directory / f"{name}.txt"
        if p.exists():
            streams[name] = load_corpus(p, vocab, split=name)[0]
    return streams, vocab


def batchify(stream: TokenStream, batch_size: int, steps: int) -> list[BpttBatch]:
    """Lay the stream out in ``batch_size`` contiguous rows and cut windows.

    The remainder beyond ``batch_size * (len // batch_size)`` is dropped.
    Consecutive windows continue each row, so a recurrent state can be
    carried from one batch to the next.
    """
    if batch_size < 1 or steps < 1:
        raise CorpusError("batch_size and steps must be positive")
    ids = np.asarray(stream.ids)
    row_len = len(ids) // batch_size
    if row_len < 2:
        raise CorpusError(
            f"stream of {len(ids)} tokens is too short for batch_size {batch_size}")
    rows = ids[: batch_size * row_len].reshape(batch_size, row_len)
    batches = []
    for i in range(0, row_len - 1, steps):
        n = min(steps, row_len - 1 - i)
        batches.append(BpttBatch(rows[:, i:i + n], rows[:, i + 1:i + 1 + n]))
    return batches


def take_contiguous(stream: TokenStream, offset: int, length: int) -> TokenStream:
    if offset < 0 or length < 0 or offset + length > len(stream):
        raise CorpusError(
            f"slice [{offset}, {offset + length}) outside stream of length {len(stream)}")
    return TokenStream(stream.ids[offset:offset + length].copy(), stream.source_split)


def random_offset(stream_len: int, length: int, seed: int) -> int:
    """Seeded uniform start position for a slice of ``length`` tokens."""
    if length > stream_len:
        raise CorpusError(f"cannot take {length} tokens from {stream_len}")
    return int(child_rng(seed, "data-offset").integers(0, stream_len - length + 1))
