"""Corpus ingestion, vocabulary, tokenization, batching, synthetic data.

Corpus files are UTF-8, one sentence per line. Tokenization is deliberately
plain: lowercased whitespace splitting against a frequency-ranked vocabulary.
The synthetic generators produce desk-scale stand-ins for the line-per-sentence
training corpus and for scored sentence-pair evaluation sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EmptyCorpusError, SamplingError

log = logging.getLogger(__name__)

PAD_ID = 0
CLS_ID = 1
UNK_ID = 2
RESERVED = {PAD_ID: "<pad>", CLS_ID: "<cls>", UNK_ID: "<unk>"}
N_RESERVED = 3


@dataclass
class Vocabulary:
    """Token-to-id map with fixed reserved ids 0=PAD, 1=CLS, 2=UNK."""

    token_to_id: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return N_RESERVED + len(self.token_to_id)

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return sorted(self.token_to_id, key=self.token_to_id.get)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass
class TokenizedSentence:
    ids: list[int]  # CLS-prefixed

    @property
    def length(self) -> int:
        return len(self.ids)


@dataclass
class SentenceBatch:
    ids: np.ndarray   # (batch, seq) int64, PAD-filled
    mask: np.ndarray  # (batch, seq) int8, 1 on real tokens

    @property
    def size(self) -> int:
        return self.ids.shape[0]


@dataclass
class TokenizedCorpus:
    """A tokenized corpus ready for batch sampling."""

    sentences: list[TokenizedSentence]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.sentences)


def load_corpus(path) -> list[str]:
    """Read a line-per-sentence file, dropping empty lines, keeping order.

    Unreadable files raise the underlying OSError.
    """
    with open(path, encoding="utf-8") as fh:
        sentences = [line.strip() for line in fh]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise EmptyCorpusError(f"no usable sentences in {path}")
    log.info("loaded %d sentences from %s", len(sentences), path)
    return sentences


def build_vocab(sentences: list[str], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary of lowercased whitespace tokens.

    Ties break lexicographically; the top (max_size - 3) tokens are kept
    after the reserved ids.
    """
    if max_size <= N_RESERVED:
        raise DomainError(f"max_size must exceed {N_RESERVED}, got {max_size}")
    counts: dict[str, int] = {}
    for sentence in sentences:
        for token in sentence.lower().split():
            counts[token] = counts.get(token, 0) + 1
    ranked = sorted(counts, key=lambda t: (-counts[t], t))[: max_size - N_RESERVED]
    return Vocabulary({tok: N_RESERVED + i for i, tok in enumerate(ranked)})


def tokenize(sentence: str, vocab: Vocabulary, max_seq_len: int) -> TokenizedSentence:
    """CLS-prefixed token ids, OOV mapped to UNK, truncated to max_seq_len."""
    if max_seq_len < 2:
        raise DomainError(f"max_seq_len must be >= 2, got {max_seq_len}")
    ids = [CLS_ID] + [vocab.id_of(tok) for tok in sentence.lower().split()]
    return TokenizedSentence(ids[:max_seq_len])


def prepare_corpus(sentences: list[str], vocab: Vocabulary,
                   max_seq_len: int) -> TokenizedCorpus:
    return TokenizedCorpus([tokenize(s, vocab, max_seq_len) for s in sentences], vocab)


def pack_batch(sentences: list[TokenizedSentence]) -> SentenceBatch:
    """Pad a list of tokenized sentences into an id grid plus mask."""
    width = max(s.length for s in sentences)
    ids = np.full((len(sentences), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(sentences), width), dtype=np.int8)
    for i, s in enumerate(sentences):
        ids[i, : s.length] = s.ids
        mask[i, : s.length] = 1
    return SentenceBatch(ids, mask)


def sample_batch(corpus: TokenizedCorpus, batch_size: int, seed: int) -> SentenceBatch:
    """Uniform sample without replacement, deterministic given the seed."""
    if batch_size < 1:
        raise SamplingError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > len(corpus):
        raise SamplingError(
            f"batch_size {batch_size} exceeds corpus size {len(corpus)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(corpus), size=batch_size, replace=False)
    return pack_batch([corpus.sentences[int(i)] for i in picks])


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

_STS_SENT_LEN = 10
_PERTURB_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def generate_synthetic_corpus(n_sentences: int, n_words: int = 20,
                              sentence_len: int = 10, seed: int = 0) -> list[str]:
    """Near-duplicate sentence pairs over a small invented word list.

    Consecutive sentences differ in exactly one of sentence_len distinct
    tokens. The hard in-batch negatives keep the contrastive loss (and its
    gradient) alive for the whole desk-scale step budget instead of
    collapsing within a few steps.
    """
    if n_sentences < 1:
        raise DomainError("n_sentences must be >= 1")
    if n_words < sentence_len + 1:
        raise DomainError(f"need n_words > sentence_len, got {n_words} <= {sentence_len}")
    words = [f"w{i:03d}" for i in range(n_words)]
    rng = np.random.default_rng(seed)
    sentences: list[str] = []
    while len(sentences) < n_sentences:
        picks = rng.choice(n_words, size=sentence_len, replace=False)
        base = [words[int(i)] for i in picks]
        near = base.copy()
        pos = int(rng.integers(sentence_len))
        pool = [w for w in words if w not in set(base)]
        near[pos] = pool[int(rng.integers(len(pool)))]
        sentences.append(" ".join(base))
        sentences.append(" ".join(near))
    return sentences[:n_sentences]


def generate_synthetic_sts(vocab: Vocabulary, n_pairs: int, seed: int):
    """Sentence pairs with gold score 5*(1-p) for a perturbed token fraction p.

    Each base sentence is 10 distinct vocabulary tokens; p is drawn uniformly
    from {0, 0.2, 0.4, 0.6, 0.8, 1.0} and replacement tokens are drawn
    disjointly from the base sentence, so token overlap is exactly 1-p. The
    second sentence's token order is shuffled: gold similarity is a set
    property, so word order must carry no free signal. Returns an StsDataset
    with a single "synthetic" subset.
    """
    from .sts import StsDataset, StsPair

    if n_pairs < 10:
        raise DomainError(f"n_pairs must be >= 10, got {n_pairs}")
    tokens = vocab.tokens
    if len(tokens) < 2 * _STS_SENT_LEN:
        raise DomainError(
            f"need at least {2 * _STS_SENT_LEN} vocabulary tokens, have {len(tokens)}")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        p = _PERTURB_FRACTIONS[int(rng.integers(len(_PERTURB_FRACTIONS)))]
        base_idx = rng.choice(len(tokens), size=_STS_SENT_LEN, replace=False)
        base = [tokens[int(i)] for i in base_idx]
        n_replace = round(p * _STS_SENT_LEN)
        other = base.copy()
        if n_replace:
            positions = rng.choice(_STS_SENT_LEN, size=n_replace, replace=False)
            pool = [t for t in tokens if t not in set(base)]
            repl_idx = rng.choice(len(pool), size=n_replace, replace=False)
            for pos, ri in zip(positions, repl_idx):
                other[int(pos)] = pool[int(ri)]
        other = [other[int(i)] for i in rng.permutation(_STS_SENT_LEN)]
        # integer arithmetic keeps the gold scores exactly in {0, 1, ..., 5}
        gold = (_STS_SENT_LEN - n_replace) * 5.0 / _STS_SENT_LEN
        pairs.append(StsPair(" ".join(base), " ".join(other), gold))
    return StsDataset("synthetic", {"synthetic": pairs})


def write_sts(dataset, dir_path) -> None:
    """Write a dataset as one TSV per subset: gold<TAB>sentence1<TAB>sentence2."""
    import os

    os.makedirs(dir_path, exist_ok=True)
    for subset, pairs in dataset.subsets.items():
        with open(os.path.join(dir_path, f"{subset}.tsv"), "w", encoding="utf-8") as fh:
            for pair in pairs:
                fh.write(f"{pair.gold}\t{pair.sentence1}\t{pair.sentence2}\n")
