"""Command-line embeddings, SimHash signatures and strategy selection.

Three small deterministic embedders stand in for the usual neural models:

* ``TokenContext``: skip-gram with negative sampling trained for one epoch.
* ``SubwordNGram``: hashed character n-grams looked up in a seeded table.
* ``DocumentAverage``: token-count profile times a seeded random matrix.

Every command vector is L2-normalized.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

SIG_BITS = 64


class EmptyCorpus(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class Strategy(str, Enum):
    TOKEN_CONTEXT = "TokenContext"
    SUBWORD_NGRAM = "SubwordNGram"
    DOCUMENT_AVERAGE = "DocumentAverage"


# tie-break priority when separability scores are equal
STRATEGY_PRIORITY = (Strategy.TOKEN_CONTEXT, Strategy.SUBWORD_NGRAM, Strategy.DOCUMENT_AVERAGE)


@dataclass(frozen=True)
class EmbeddingConfig:
    strategy: Strategy = Strategy.TOKEN_CONTEXT
    vector_size: int = 60
    window: int = 2
    ngram_range: tuple[int, int] = (3, 5)
    seed: int = 0
    negatives: int = 5
    learning_rate: float = 0.025
    hash_buckets: int = 1 << 14

    def __post_init__(self):
        if self.vector_size < 8:
            raise ValueError("vector_size must be >= 8")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        lo, hi = self.ngram_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad ngram_range {self.ngram_range}")


def default_configs(vector_size: int = 60, seed: int = 0) -> list[EmbeddingConfig]:
    return [EmbeddingConfig(strategy=s, vector_size=vector_size, seed=seed) for s in STRATEGY_PRIORITY]


_SEP = re.compile(r"[\\/=]")


def tokenize(cmdline: str) -> list[str]:
    """Lowercase and split a command-line into tokens.

    Whitespace separates arguments. A flag (leading ``-`` or ``/`` with no
    further path separator) stays whole apart from a ``key=value`` split;
    any other argument is split on ``/``, ``\\`` and ``=``.

    >>> tokenize("/noconfig /fullpaths @C:\\\\x\\\\4krwc2ua.cmdline")
    ['/noconfig', '/fullpaths', '@c:', 'x', '4krwc2ua.cmdline']
    """
    tokens: list[str] = []
    for chunk in cmdline.lower().split():
        if chunk[0] in "-/" and not re.search(r"[\\/]", chunk[1:]):
            parts = chunk.split("=")
        else:
            parts = _SEP.split(chunk)
        tokens.extend(p for p in parts if p)
    return tokens


def _stable_hash(text: str, salt: int = 0) -> int:
    return zlib.crc32(text.encode("utf-8"), salt & 0xFFFFFFFF)


def _l2(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def char_ngrams(token: str, lo: int, hi: int) -> list[str]:
    word = f"<{token}>"
    return [word[i:i + n] for n in range(lo, hi + 1) for i in range(len(word) - n + 1)]


class Embedder:
    """Fit on a corpus once, then embed any command-line.

    The fitted state depends only on the set of distinct command-lines, not
    on their order or multiplicity.
    """

    def __init__(self, cfg: EmbeddingConfig):
        self.cfg = cfg
        self.vocab: dict[str, int] = {}
        self.token_vectors: np.ndarray = np.zeros((0, cfg.vector_size))
        self._table: np.ndarray | None = None

    def fit(self, cmdlines: Iterable[str]) -> "Embedder":
        corpus = sorted(set(cmdlines))
        if not corpus:
            raise EmptyCorpus("cannot fit an embedding on an empty corpus")
        docs = [tokenize(c) for c in corpus]
        self.vocab = {t: i for i, t in enumerate(sorted({t for d in docs for t in d}))}
        s = self.cfg.strategy
        if s is Strategy.TOKEN_CONTEXT:
            self.token_vectors = self._train_skipgram(docs)
        elif s is Strategy.SUBWORD_NGRAM:
            rng = np.random.default_rng(self.cfg.seed)
            self._table = rng.standard_normal((self.cfg.hash_buckets, self.cfg.vector_size))
            self.token_vectors = np.array(
                [self._subword_vector(t) for t in self.vocab], dtype=float
            ).reshape(len(self.vocab), self.cfg.vector_size)
        else:
            rng = np.random.default_rng(self.cfg.seed)
            # one fixed random row per vocabulary token (sorted, so order-free)
            self.token_vectors = rng.standard_normal((len(self.vocab), self.cfg.vector_size))
        return self

    def _subword_vector(self, token: str) -> np.ndarray:
        lo, hi = self.cfg.ngram_range
        grams = char_ngrams(token, lo, hi)
        idx = [_stable_hash(g, self.cfg.seed) % self.cfg.hash_buckets for g in grams]
        return self._table[idx].mean(axis=0)

    def _train_skipgram(self, docs: list[list[str]]) -> np.ndarray:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        V, D = len(self.vocab), cfg.vector_size
        w_in = (rng.random((V, D)) - 0.5) / D
        w_out = np.zeros((V, D))
        counts = np.zeros(V)
        centers: list[int] = []
        contexts: list[int] = []
        for doc in docs:
            ids = [self.vocab[t] for t in doc]
            for i, c in enumerate(ids):
                counts[c] += 1
                for j in range(max(0, i - cfg.window), min(len(ids), i + cfg.window + 1)):
                    if j != i:
                        centers.append(c)
                        contexts.append(ids[j])
        if not centers:
            return w_in
        noise = counts ** 0.75
        noise /= noise.sum()
        centers_a = np.asarray(centers)
        contexts_a = np.asarray(contexts)
        order = rng.permutation(len(centers_a))
        centers_a, contexts_a = centers_a[order], contexts_a[order]
        n_pairs = len(centers_a)
        batch = 64
        for start in range(0, n_pairs, batch):
            lr = cfg.learning_rate * max(1e-4, 1.0 - start / n_pairs)
            c = centers_a[start:start + batch]
            o = contexts_a[start:start + batch]
            neg = rng.choice(V, size=(len(c), cfg.negatives), p=noise)
            targets = np.concatenate([o[:, None], neg], axis=1)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            v_c = w_in[c]
            v_t = w_out[targets]
            score = np.einsum("bd,bkd->bk", v_c, v_t)
            grad = (labels - 1.0 / (1.0 + np.exp(-np.clip(score, -30, 30)))) * lr
            np.add.at(w_out, targets, grad[:, :, None] * v_c[:, None, :])
            np.add.at(w_in, c, np.einsum("bk,bkd->bd", grad, v_t))
        return w_in

    def token_vector(self, token: str) -> np.ndarray:
        i = self.vocab.get(token)
        if i is not None:
            return self.token_vectors[i]
        if self.cfg.strategy is Strategy.SUBWORD_NGRAM:
            return self._subword_vector(token)
        return np.zeros(self.cfg.vector_size)

    def embed(self, cmdline: str) -> np.ndarray:
        tokens = tokenize(cmdline)
        if not tokens:
            return np.zeros(self.cfg.vector_size)
        if self.cfg.strategy is Strategy.DOCUMENT_AVERAGE:
            vec = np.zeros(self.cfg.vector_size)
            for t in tokens:
                vec = vec + self.token_vector(t)
        else:
            vec = np.mean([self.token_vector(t) for t in tokens], axis=0)
        return _l2(vec)

    def embed_many(self, cmdlines: Iterable[str]) -> dict[str, np.ndarray]:
        return {c: self.embed(c) for c in sorted(set(cmdlines))}


def embed_corpus(cmdlines: Sequence[str], cfg: EmbeddingConfig) -> dict[str, np.ndarray]:
    """Fit ``cfg.strategy`` on ``cmdlines`` and return one vector per distinct command."""
    if not cmdlines:
        raise EmptyCorpus("cannot embed an empty corpus")
    return Embedder(cfg).fit(cmdlines).embed_many(cmdlines)


@lru_cache(maxsize=32)
def _hyperplanes(dim: int, seed: int) -> np.ndarray:
    planes = np.random.default_rng(seed).standard_normal((SIG_BITS, dim))
    planes.setflags(write=False)
    return planes


@dataclass(frozen=True)
class SimHashSignature:
    bits: int
    source_id: str = ""

    def __str__(self) -> str:
        return f"{self.bits:016x}"


_WEIGHTS = (1 << np.arange(SIG_BITS, dtype=np.uint64)).astype(np.uint64)


def simhash_bits(vectors: np.ndarray, seed: int = 0) -> np.ndarray:
    """Sign-random-projection fingerprints for the rows of ``vectors`` (uint64)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    signs = vectors @ _hyperplanes(vectors.shape[1], seed).T >= 0
    return (signs.astype(np.uint64) * _WEIGHTS).sum(axis=1, dtype=np.uint64)


def simhash(vector: np.ndarray, seed: int = 0, source_id: str = "") -> SimHashSignature:
    """64-bit signature: bit i is set iff the vector lies on the positive side of plane i."""
    return SimHashSignature(int(simhash_bits(vector, seed)[0]), source_id)


def hamming(a: SimHashSignature | int, b: SimHashSignature | int) -> int:
    x = a.bits if isinstance(a, SimHashSignature) else a
    y = b.bits if isinstance(b, SimHashSignature) else b
    return (x ^ y).bit_count()


def pairwise_hamming(bits: np.ndarray) -> np.ndarray:
    """Full matrix of Hamming distances between uint64 fingerprints."""
    bits = np.asarray(bits, dtype=np.uint64)
    return np.bitwise_count(bits[:, None] ^ bits[None, :]).astype(np.int64)


def separability(bits: np.ndarray) -> float:
    """Mean pairwise Hamming distance over distinct items, divided by 64."""
    n = len(bits)
    if n < 2:
        return 0.0
    d = pairwise_hamming(bits)
    return float(d[np.triu_indices(n, 1)].mean() / SIG_BITS)


@dataclass
class SelectionReport:
    chosen: Strategy
    scores: dict[Strategy, float]
    n_commands: int
    vectors: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen.value,
            "separability": {s.value: round(v, 12) for s, v in self.scores.items()},
            "n_commands": self.n_commands,
        }


def select_embedding(
    cmdlines: Sequence[str],
    cfgs: Sequence[EmbeddingConfig] | None = None,
    simhash_seed: int | None = None,
) -> SelectionReport:
    """Pick the strategy whose SimHash signatures spread the commands furthest apart."""
    corpus = sorted(set(cmdlines))
    if len(corpus) < 2:
        raise TooFewSamples("need at least two distinct command-lines")
    cfgs = list(cfgs) if cfgs is not None else default_configs()
    scores: dict[Strategy, float] = {}
    vectors: dict[Strategy, dict[str, np.ndarray]] = {}
    for cfg in cfgs:
        vecs = embed_corpus(corpus, cfg)
        seed = cfg.seed if simhash_seed is None else simhash_seed
        bits = simhash_bits(np.stack([vecs[c] for c in corpus]), seed)
        scores[cfg.strategy] = separability(bits)
        vectors[cfg.strategy] = vecs
    rank = {s: i for i, s in enumerate(STRATEGY_PRIORITY)}
    chosen = max(scores, key=lambda s: (scores[s], -rank[s]))
    return SelectionReport(chosen=chosen, scores=scores, n_commands=len(corpus), vectors=vectors[chosen])
