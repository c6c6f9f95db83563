"""Corpus and word-vector ingestion, sentence embedding, batch construction.

File conventions:
  corpus       one sentence per line, blank line separates documents
  word vectors optional "<count> <dim>" header, then "<token> v1 ... v_dim"
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def tokenize(line: str) -> list[str]:
    """Lowercased whitespace tokens; may be empty."""
    return line.lower().split()


@dataclass
class EmbeddingTable:
    """Token to fixed vector map. Vectors are read-only after loading."""

    dim: int
    _vectors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, token):
        return token in self._vectors

    def lookup(self, token):
        """The token's vector, or None when out of vocabulary."""
        return self._vectors.get(token)

    def tokens(self):
        return self._vectors.keys()


def load_word_vectors(path) -> EmbeddingTable:
    vectors: dict = {}
    dim = None
    declared = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2:
                try:
                    declared = (int(parts[0]), int(parts[1]))
                    continue
                except ValueError:
                    pass  # a 1-d vector row, not a header
            token = parts[0]
            if token == "" or len(parts) < 2:
                raise DataError(f"{path}: line {lineno}: expected '<token> v1 ...'")
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: unparseable float")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(f"{path}: line {lineno}: row has {vec.size} values, expected {dim}")
            if token in vectors:
                raise DataError(f"{path}: line {lineno}: duplicate token '{token}'")
            vec.flags.writeable = False
            vectors[token] = vec
    if dim is None:
        raise DataError(f"{path}: no word vectors found")
    if declared is not None:
        if declared[1] != dim:
            raise DataError(f"{path}: header declares dim {declared[1]}, rows have {dim}")
        if declared[0] != len(vectors):
            raise DataError(f"{path}: header declares {declared[0]} rows, found {len(vectors)}")
    return EmbeddingTable(dim=dim, _vectors=vectors)


def write_word_vectors(pairs, dim, path, header=True):
    """Write "<token> v1 ... v_dim" rows. Floats round-trip exactly."""
    pairs = list(pairs)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(pairs)} {dim}\n")
        for token, vec in pairs:
            text = " ".join(np.format_float_positional(x, unique=True, trim="0") for x in vec)
            fh.write(f"{token} {text}\n")


@dataclass
class Corpus:
    """Ordered tokenized sentences; adjacency between them is the supervision."""

    sentences: list
    document_break_after: set = field(default_factory=set)

    def __len__(self):
        return len(self.sentences)

    def document_ids(self):
        """Per-sentence document index."""
        ids = np.zeros(len(self.sentences), dtype=np.int64)
        doc = 0
        for i in range(len(self.sentences)):
            ids[i] = doc
            if i in self.document_break_after:
                doc += 1
        return ids

    def document_spans(self):
        """(start, stop) of each document, in order."""
        spans = []
        start = 0
        for i in range(len(self.sentences)):
            if i in self.document_break_after:
                spans.append((start, i + 1))
                start = i + 1
        if start < len(self.sentences):
            spans.append((start, len(self.sentences)))
        return spans


def load_corpus(path) -> Corpus:
    """One sentence per line; a blank line ends the current document."""
    sentences = []
    breaks = set()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            tokens = tokenize(raw)
            if not tokens:
                if sentences:
                    breaks.add(len(sentences) - 1)
                continue
            sentences.append(tokens)
    breaks.discard(len(sentences) - 1)  # trailing break carries no information
    return Corpus(sentences=sentences, document_break_after=breaks)


def write_corpus(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for i, sent in enumerate(corpus.sentences):
            fh.write(" ".join(sent) + "\n")
            if i in corpus.document_break_after:
                fh.write("\n")


def embed_sentence(tokens, table: EmbeddingTable) -> np.ndarray:
    """Stack token vectors into an (M, dim) matrix.

    Out-of-vocabulary tokens become zero rows but still occupy a position, so
    every consumer sees the same sequence length.
    """
    if not tokens:
        raise ValueError("cannot embed an empty sentence")
    out = np.zeros((len(tokens), table.dim), dtype=np.float64)
    for t, token in enumerate(tokens):
        vec = table.lookup(token)
        if vec is not None:
            out[t] = vec
    return out


@dataclass
class SentenceBatch:
    """N contiguous sentences from one document."""

    start: int
    sentences: list
    embedded: list | None = None


def make_batches(corpus: Corpus, n: int, seed, table: EmbeddingTable | None = None):
    """Non-overlapping windows of `n` contiguous sentences, never crossing a
    document break. The trailing remainder of each document is dropped.
    Window order is shuffled deterministically by `seed`; order inside a
    window is preserved.
    """
    if n < 2:
        raise ValueError("batch size must be at least 2")
    windows = []
    for start, stop in corpus.document_spans():
        for s in range(start, stop - n + 1, n):
            windows.append(s)
    if not windows:
        raise DataError(f"every document is shorter than the batch size {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(windows))
    batches = []
    for w in order:
        s = windows[w]
        sents = corpus.sentences[s : s + n]
        embedded = [embed_sentence(sent, table) for sent in sents] if table is not None else None
        batches.append(SentenceBatch(start=s, sentences=sents, embedded=embedded))
    return batches
