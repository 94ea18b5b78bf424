"""Collapsed Gibbs LDA on the parameter server, plus a standalone sequential sampler.

Word-topic counts (one dense row per word) and topic totals (row 0 of a
second table) live in the server; doc-topic counts stay with the worker that
owns the document. A token's own assignment is removed from the counts it
reads before sampling, and an Inc pair (-1 old, +1 new) is issued only when
the topic changes, which is the same net update as remove-then-add.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..core import DENSE, ParamKey
from ..errors import ConfigError
from ..policy import ConsistencyPolicy
from ..topology import TableSpec, Topology

WORD_TOPIC = 0
TOPIC_TOTAL = 1


@dataclass(frozen=True)
class LdaCorpus:
    V: int
    docs: Tuple[Tuple[int, ...], ...]
    # Topic-word distributions the corpus was generated from, when known.
    planted: Optional[Tuple[Tuple[float, ...], ...]] = field(default=None, compare=False)

    @property
    def D(self) -> int:
        return len(self.docs)

    @property
    def num_tokens(self) -> int:
        return sum(len(d) for d in self.docs)

    def word_counts(self) -> List[int]:
        counts = [0] * self.V
        for d in self.docs:
            for w in d:
                counts[w] += 1
        return counts


def synth_corpus(topics: int, docs: int, vocab: int, doc_len: int, seed: int,
                 doc_alpha: float = 0.2, word_beta: float = 0.05) -> LdaCorpus:
    """Documents drawn from planted topics; each topic favours its own block of the vocabulary."""
    if min(topics, docs, vocab, doc_len) < 1:
        raise ConfigError("corpus parameters must be positive")
    rng = random.Random(f"corpus:{seed}")
    block = max(1, vocab // topics)
    planted, phis = [], []
    for k in range(topics):
        weights = [rng.gammavariate(word_beta, 1.0) + (1.0 if w // block == k else 0.0)
                   for w in range(vocab)]
        total = math.fsum(weights)
        planted.append(tuple(x / total for x in weights))
        phis.append(_cumulative(planted[-1]))
    out = []
    for _ in range(docs):
        theta = [rng.gammavariate(doc_alpha, 1.0) + 1e-12 for _ in range(topics)]
        total = math.fsum(theta)
        cum_theta = _cumulative([x / total for x in theta])
        doc = []
        for _ in range(doc_len):
            k = _pick(cum_theta, rng.random())
            doc.append(_pick(phis[k], rng.random()))
        out.append(tuple(doc))
    return LdaCorpus(vocab, tuple(out), tuple(planted))


def _cumulative(ps: Sequence[float]) -> List[float]:
    acc, out = 0.0, []
    for p in ps:
        acc += p
        out.append(acc)
    return out


def _pick(cum: Sequence[float], r: float) -> int:
    r *= cum[-1]
    for i, c in enumerate(cum):
        if r < c:
            return i
    return len(cum) - 1


def write_corpus(corpus: LdaCorpus, path) -> None:
    lines = [f"V={corpus.V} D={corpus.D}"] + [" ".join(map(str, d)) for d in corpus.docs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_corpus(path) -> LdaCorpus:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty corpus file")
    try:
        fields = dict(part.split("=", 1) for part in lines[0].split())
        V, D = int(fields["V"]), int(fields["D"])
        docs = tuple(tuple(int(t) for t in line.split()) for line in lines[1:1 + D])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed corpus ({exc})") from None
    if len(docs) != D or any(not 0 <= w < V for d in docs for w in d):
        raise ConfigError(f"{path}: header V={V} D={D} does not match the documents")
    return LdaCorpus(V, docs)


# -- sampler pieces -------------------------------------------------------------

def conditional(ndk: Sequence[float], nwk: Sequence[float], nk: Sequence[float],
                alpha: float, beta: float, vbeta: float) -> List[float]:
    # Replica counts can be transiently negative under asynchrony; floor only here.
    return [(ndk[k] + alpha) * ((nwk[k] if nwk[k] > 0 else 0.0) + beta)
            / ((nk[k] if nk[k] > 0 else 0.0) + vbeta) for k in range(len(ndk))]


def draw(weights: Sequence[float], rng: random.Random) -> int:
    r = rng.random() * math.fsum(weights)
    acc = 0.0
    for k, w in enumerate(weights):
        acc += w
        if r < acc:
            return k
    return len(weights) - 1


def initial_topic(rng: random.Random, Kt: int) -> int:
    return rng.randrange(Kt)


def log_likelihood(corpus: LdaCorpus, z: Sequence[Sequence[int]], Kt: int,
                   alpha: float, beta: float) -> float:
    """log p(w, z) of the collapsed model, from assignments alone."""
    V = corpus.V
    nwk = [[0] * Kt for _ in range(V)]
    nk = [0] * Kt
    terms = []
    lg = math.lgamma
    for doc, zd in zip(corpus.docs, z):
        ndk = [0] * Kt
        for w, k in zip(doc, zd):
            nwk[w][k] += 1
            nk[k] += 1
            ndk[k] += 1
        terms.append(lg(Kt * alpha) - lg(len(doc) + Kt * alpha))
        terms.extend(lg(c + alpha) - lg(alpha) for c in ndk)
    for k in range(Kt):
        terms.append(lg(V * beta) - lg(nk[k] + V * beta))
        terms.extend(lg(nwk[w][k] + beta) - lg(beta) for w in range(V) if nwk[w][k])
    return math.fsum(terms)


def worker_docs(corpus: LdaCorpus, P: int, p: int) -> List[int]:
    return list(range(p, corpus.D, P))


def lda_rng(seed: int, p: int) -> random.Random:
    return random.Random(f"lda:{seed}:{p}")


# -- standalone sequential oracle -----------------------------------------------

def sequential_gibbs(corpus: LdaCorpus, Kt: int, sweeps: int, seed: int,
                     alpha: float = 0.1, beta: float = 0.01, track_ll: bool = True):
    """Plain in-memory collapsed Gibbs; returns (assignments, per-sweep log-likelihood)."""
    rng = lda_rng(seed, 0)
    V = corpus.V
    vbeta = V * beta
    nwk = [[0.0] * Kt for _ in range(V)]
    nk = [0.0] * Kt
    z, ndks = [], []
    for doc in corpus.docs:
        zd, ndk = [], [0.0] * Kt
        for w in doc:
            k = initial_topic(rng, Kt)
            zd.append(k)
            ndk[k] += 1
            nwk[w][k] += 1
            nk[k] += 1
        z.append(zd)
        ndks.append(ndk)
    lls = []
    for _ in range(sweeps):
        for d, doc in enumerate(corpus.docs):
            zd, ndk = z[d], ndks[d]
            for i, w in enumerate(doc):
                old = zd[i]
                row = list(nwk[w])
                tot = list(nk)
                row[old] -= 1
                tot[old] -= 1
                ndk[old] -= 1
                new = draw(conditional(ndk, row, tot, alpha, beta, vbeta), rng)
                ndk[new] += 1
                if new != old:
                    zd[i] = new
                    nwk[w][old] -= 1
                    nk[old] -= 1
                    nwk[w][new] += 1
                    nk[new] += 1
        if track_ll:
            lls.append(log_likelihood(corpus, z, Kt, alpha, beta))
    return z, lls


def topic_recovery(corpus: LdaCorpus, z, Kt: int, beta: float = 0.01) -> float:
    """Mean cosine between planted and learned topic-word vectors under the best matching."""
    if corpus.planted is None:
        raise ConfigError("corpus has no planted topics")
    learned = [[beta] * corpus.V for _ in range(Kt)]
    for doc, zd in zip(corpus.docs, z):
        for w, k in zip(doc, zd):
            learned[k][w] += 1

    def cos(a, b):
        dot = math.fsum(x * y for x, y in zip(a, b))
        return dot / math.sqrt(math.fsum(x * x for x in a) * math.fsum(y * y for y in b))

    sims = [[cos(p, q) for q in learned] for p in corpus.planted]
    n = len(sims)
    if n > 8:  # greedy beyond what brute force can enumerate
        return math.fsum(max(row) for row in sims) / n
    return max(math.fsum(sims[i][j] for i, j in enumerate(perm))
               for perm in permutations(range(Kt), n)) / n


# -- distributed ----------------------------------------------------------------

def lda_tables(corpus: LdaCorpus, Kt: int, policy: ConsistencyPolicy) -> Dict[int, TableSpec]:
    if policy.magnitude_cap_u < 1:
        raise ConfigError("LDA count updates need u >= 1")
    return {WORD_TOPIC: TableSpec(WORD_TOPIC, policy, DENSE, Kt),
            TOPIC_TOTAL: TableSpec(TOPIC_TOTAL, policy, DENSE, Kt)}


def lda_programs(corpus: LdaCorpus, topology: Topology, Kt: int, sweeps: int, seed: int,
                 alpha: float = 0.1, beta: float = 0.01):
    """Each program returns {doc: assignments} for the documents it owns."""
    workers = topology.workers
    P = len(workers)
    vbeta = corpus.V * beta

    def make(p: int):
        def program(api):
            rng = lda_rng(seed, p)
            mine = worker_docs(corpus, P, p)
            z, ndks = {}, {}
            for d in mine:
                zd, ndk = [], [0.0] * Kt
                for w in corpus.docs[d]:
                    k = initial_topic(rng, Kt)
                    zd.append(k)
                    ndk[k] += 1
                    yield from api.inc(WORD_TOPIC, w, k, 1.0)
                    yield from api.inc(TOPIC_TOTAL, 0, k, 1.0)
                z[d], ndks[d] = zd, ndk
            yield from api.clock()
            for _ in range(sweeps):
                for d in mine:
                    zd, ndk = z[d], ndks[d]
                    for i, w in enumerate(corpus.docs[d]):
                        old = zd[i]
                        wrow = yield from api.get_row(WORD_TOPIC, w)
                        trow = yield from api.get_row(TOPIC_TOTAL, 0)
                        row = [wrow[k] for k in range(Kt)]
                        tot = [trow[k] for k in range(Kt)]
                        row[old] -= 1
                        tot[old] -= 1
                        ndk[old] -= 1
                        new = draw(conditional(ndk, row, tot, alpha, beta, vbeta), rng)
                        ndk[new] += 1
                        if new != old:
                            zd[i] = new
                            yield from api.inc(WORD_TOPIC, w, old, -1.0)
                            yield from api.inc(TOPIC_TOTAL, 0, old, -1.0)
                            yield from api.inc(WORD_TOPIC, w, new, 1.0)
                            yield from api.inc(TOPIC_TOTAL, 0, new, 1.0)
                yield from api.clock()
            return z
        return program

    return {w: make(p) for p, w in enumerate(workers)}


@dataclass
class LdaResult:
    z: List[List[int]]
    final_ll: float
    word_topic: Dict[Tuple[int, int], float]
    topic_total: List[float]
    conserved: bool
    non_negative: bool
    sim_steps: int


def run_lda(corpus: LdaCorpus, topology: Topology, policy: ConsistencyPolicy, Kt: int, sweeps: int,
            seed: int, alpha: float = 0.1, beta: float = 0.01, quantum: int = 8,
            **sim_kw) -> LdaResult:
    from ..sim import simulate

    tables = lda_tables(corpus, Kt, policy)
    sim, res = simulate(topology, tables, lda_programs(corpus, topology, Kt, sweeps, seed, alpha, beta),
                        seed, ledger=False, record_log=False, quantum=quantum, **sim_kw)
    z: List[Optional[List[int]]] = [None] * corpus.D
    for zmap in res.results.values():
        for d, zd in zmap.items():
            z[d] = zd
    master = sim.master_state()
    wt = {(k.row_id, k.col_id): v for k, v in master.items() if k.table_id == WORD_TOPIC}
    tt = [master.get(ParamKey(TOPIC_TOTAL, 0, k), 0.0) for k in range(Kt)]
    return LdaResult(z, log_likelihood(corpus, z, Kt, alpha, beta), wt, tt,
                     conserved=check_conservation(corpus, z, wt, tt, Kt),
                     non_negative=all(v >= 0 for v in wt.values()) and all(v >= 0 for v in tt),
                     sim_steps=res.steps)


def check_conservation(corpus: LdaCorpus, z, word_topic: Dict[Tuple[int, int], float],
                       topic_total: Sequence[float], Kt: int) -> bool:
    """Server counts equal counts rebuilt from the assignments, exactly."""
    expect_wt: Dict[Tuple[int, int], int] = {}
    expect_tt = [0] * Kt
    for doc, zd in zip(corpus.docs, z):
        for w, k in zip(doc, zd):
            expect_wt[(w, k)] = expect_wt.get((w, k), 0) + 1
            expect_tt[k] += 1
    if any(word_topic.get(wk, 0.0) != c for wk, c in expect_wt.items()):
        return False
    if any(v != 0.0 for wk, v in word_topic.items() if wk not in expect_wt):
        return False
    per_word = corpus.word_counts()
    for w in range(corpus.V):
        if math.fsum(word_topic.get((w, k), 0.0) for k in range(Kt)) != per_word[w]:
            return False
    return list(topic_total) == [float(c) for c in expect_tt] and sum(expect_tt) == corpus.num_tokens
