"""Synthetic topical corpora with known adjacency structure.

Documents draw words from a running topic that occasionally switches, and
every adjacent sentence pair shares an ordered two-word pattern drawn from a
small per-document pattern pool. Within a document the pattern words recur
constantly, so as unigrams they say little about adjacency and only their
ordering does; across documents the pools rarely overlap, so the same words
act as a document fingerprint. Order-blind and order-sensitive encoders
therefore see complementary halves of the adjacency evidence.
"""

from __future__ import annotations

import numpy as np

from .textio import Corpus, write_corpus, write_word_vectors


def topical_vocabulary(n_topics=10, topic_words=80, common_words=100, pattern_words=100):
    topics = [[f"t{k}w{j}" for j in range(topic_words)] for k in range(n_topics)]
    common = [f"c{j}" for j in range(common_words)]
    patterns = [f"p{j}" for j in range(pattern_words)]
    return topics, common, patterns


def generate_topical_corpus(n_documents, sentences_per_document=20, n_topics=10,
                            topic_words=80, common_words=100, pattern_words=100,
                            min_body=5, max_body=8, topic_switch_prob=0.2,
                            topic_word_prob=0.75, patterns_per_document=6,
                            seed=0) -> Corpus:
    topics, common, patterns = topical_vocabulary(n_topics, topic_words, common_words,
                                                  pattern_words)
    rng = np.random.default_rng([seed, 42])
    sentences = []
    breaks = set()
    for _ in range(n_documents):
        topic = int(rng.integers(n_topics))
        pool = rng.choice(pattern_words, size=patterns_per_document, replace=False)
        bigram_to_next = None
        for position in range(sentences_per_document):
            if position > 0 and rng.random() < topic_switch_prob:
                topic = int(rng.integers(n_topics))
            body = []
            for _ in range(int(rng.integers(min_body, max_body + 1))):
                if rng.random() < topic_word_prob:
                    body.append(topics[topic][int(rng.integers(topic_words))])
                else:
                    body.append(common[int(rng.integers(common_words))])
            bigram_from_prev = bigram_to_next
            if position < sentences_per_document - 1:
                x, y = rng.choice(pool, size=2, replace=False)
                bigram_to_next = [patterns[int(x)], patterns[int(y)]]
            else:
                bigram_to_next = None
            # each shared pattern stays an ordered two-word block
            for block in (bigram_from_prev, bigram_to_next):
                if block is not None:
                    at = int(rng.integers(len(body) + 1))
                    body[at:at] = block
            sentences.append(body)
        breaks.add(len(sentences) - 1)
    breaks.discard(len(sentences) - 1)
    return Corpus(sentences=sentences, document_break_after=breaks)


def write_random_word_vectors(path, dim=50, n_topics=10, topic_words=80,
                              common_words=100, pattern_words=100, seed=0,
                              topic_strength=0.6):
    """Fixed random vectors for the full topical vocabulary.

    Words of one topic share a component of relative weight `topic_strength`
    along a random per-topic center, the way distributionally trained vectors
    cluster by topic; common and link words are pure noise.
    """
    topics, common, patterns = topical_vocabulary(n_topics, topic_words, common_words,
                                                   pattern_words)
    rng = np.random.default_rng([seed, 7001])
    scale = 1.0 / np.sqrt(dim)
    centers = rng.standard_normal((n_topics, dim)) * scale
    pairs = []
    mix = np.sqrt(1.0 - topic_strength**2)
    for k, group in enumerate(topics):
        for w in group:
            noise = rng.standard_normal(dim) * scale
            pairs.append((w, topic_strength * centers[k] + mix * noise))
    for w in common + patterns:
        pairs.append((w, rng.standard_normal(dim) * scale))
    write_word_vectors(pairs, dim, path)
    return [w for w, _ in pairs]


def write_topical_dataset(directory, n_train_documents=260, n_eval_documents=25,
                          dim=50, seed=0):
    """Write corpus, held-out stream and word vectors; returns their paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    train_path = os.path.join(directory, "train.txt")
    eval_path = os.path.join(directory, "heldout.txt")
    vec_path = os.path.join(directory, "vectors.txt")
    write_corpus(generate_topical_corpus(n_train_documents, seed=seed), train_path)
    write_corpus(generate_topical_corpus(n_eval_documents, seed=seed + 1), eval_path)
    write_random_word_vectors(vec_path, dim=dim, seed=seed)
    return train_path, eval_path, vec_path
