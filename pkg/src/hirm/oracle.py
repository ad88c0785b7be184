"""Exact posterior computation on tiny systems by exhaustive enumeration.

Sums the collapsed joint over every relation partition and every combination
of per-domain entity partitions, providing ground truth for sampler tests.
Set partitions are generated in restricted-growth-string order; conjugate
likelihoods only, and hyperparameters are held fixed.
"""

import math
from itertools import product

from .likelihood import make_family
from .partition import crp_log_prob_counts
from .util import logsumexp


class FeasibilityError(RuntimeError):
    """Enumeration would exceed the configured configuration budget."""


def set_partitions(items):
    """All partitions of `items` as tuples of tuples, RGS order, deterministic."""
    items = list(items)
    n = len(items)
    if n == 0:
        yield ()
        return
    a = [0] * n
    while True:
        n_blocks = max(a) + 1
        blocks = [[] for _ in range(n_blocks)]
        for i, label in enumerate(a):
            blocks[label].append(items[i])
        yield tuple(tuple(b) for b in blocks)
        i = n - 1
        while i > 0 and a[i] >= max(a[:i]) + 1:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for j in range(i + 1, n):
            a[j] = 0


def bell_number(n):
    """Number of set partitions of n items (Bell triangle recurrence)."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


class EnumerationReport:
    """Exact relation-partition posterior plus optional pair probabilities."""

    def __init__(self, partitions, log_weights, log_evidence, pair_probs):
        self.partitions = partitions
        self.log_weights = log_weights
        self.log_evidence = log_evidence
        self.pair_probs = pair_probs
        self.probs = [math.exp(w - log_evidence) for w in log_weights]

    def prob_of(self, blocks):
        """Posterior probability of a relation partition given as name blocks."""
        want = tuple(sorted(tuple(sorted(b)) for b in blocks))
        for partition, p in zip(self.partitions, self.probs):
            if tuple(sorted(tuple(sorted(b)) for b in partition)) == want:
                return p
        return 0.0

    def as_rows(self):
        """(canonical partition string, probability) rows for CSV export."""
        out = []
        for partition, p in zip(self.partitions, self.probs):
            label = "|".join("{" + ",".join(b) + "}" for b in partition)
            out.append((label, p))
        return out


def _resolve_families(system, families, likelihood_hypers):
    if families is None:
        overrides = likelihood_hypers or {}
        families = [
            make_family(sig, overrides.get(sig.name)) for sig in system.relations
        ]
    for sig, fam in zip(system.relations, families):
        if not fam.conjugate:
            raise ValueError(
                f"enumeration requires conjugate likelihoods; {sig.name!r} is not"
            )
    return families


class _BlockTable:
    """Marginal likelihood (and pair statistics) per distinct relation block."""

    def __init__(self, store, families, gamma, pair_queries):
        self.store = store
        self.system = store.system
        self.families = families
        self.gamma = gamma
        self.pair_queries = list(pair_queries)
        self.cache = {}

    def block_entities(self, block):
        return {
            d: sorted(self.store.observed_entities(d, block))
            for d in sorted({
                dd for k in block for dd in self.system.relations[k].domains
            })
        }

    def block_work(self, block):
        work = 1
        for ents in self.block_entities(block).values():
            work *= bell_number(len(ents))
        return work

    def marginal(self, block):
        """(log marginal, {pair query: conditional co-clustering prob})."""
        key = frozenset(block)
        if key in self.cache:
            return self.cache[key]
        ents = self.block_entities(block)
        domains = list(ents)
        queries = [
            q for q in self.pair_queries
            if q[3] in key  # context relation lives in this block
        ]
        weights = []
        pair_hits = {q: [] for q in queries}
        for combo in product(*(set_partitions(ents[d]) for d in domains)):
            assign = {}
            lp = 0.0
            for d, parts in zip(domains, combo):
                lp += crp_log_prob_counts([len(b) for b in parts], self.gamma)
                table = {}
                for bi, members in enumerate(parts):
                    for e in members:
                        table[e] = bi
                assign[d] = table
            for k in block:
                sig = self.system.relations[k]
                fam = self.families[k]
                groups = {}
                for tup, v in self.store.cells[k].items():
                    cell = tuple(
                        assign[d][e] for d, e in zip(sig.domains, tup)
                    )
                    groups.setdefault(cell, [0] * fam.codomain_size)[v] += 1
                if fam.kind == "categorical":
                    for vec in groups.values():
                        lp += fam.marginal_counts(vec)
                else:
                    for vec in groups.values():
                        lp += fam.marginal_counts(vec[0], vec[1])
            weights.append(lp)
            for q in queries:
                d, a, b, _context = q
                ad = assign.get(d, {})
                if a in ad and b in ad and ad[a] == ad[b]:
                    pair_hits[q].append(lp)
        log_m = logsumexp(weights)
        pair_cond = {}
        for q, hits in pair_hits.items():
            pair_cond[q] = math.exp(logsumexp(hits) - log_m) if hits else 0.0
        self.cache[key] = (log_m, pair_cond)
        return self.cache[key]


def enumerate_posterior(store, *, gamma0=1.0, gamma=1.0, families=None,
                        likelihood_hypers=None, pair_queries=(),
                        max_configs=10_000_000):
    """Exact relation-partition posterior with entity partitions marginalized.

    pair_queries: (domain index, entity a, entity b, context relation index)
    tuples; each gets the exact posterior probability that a and b share a
    table in the block containing the context relation.

    The feasibility guard bounds the total number of entity-partition
    configurations summed across all relation partitions (block marginals are
    memoized, so the actual work is usually much smaller).
    """
    system = store.system
    families = _resolve_families(system, families, likelihood_hypers)
    table = _BlockTable(store, families, gamma, pair_queries)

    m = system.n_relations
    partitions = list(set_partitions(range(m)))
    total_work = 0
    for blocks in partitions:
        work = 1
        for block in blocks:
            work *= table.block_work(block)
        total_work += work
    if total_work > max_configs:
        raise FeasibilityError(
            f"enumeration needs {total_work} configurations (> {max_configs})"
        )

    log_weights = []
    per_partition_pairs = []
    for blocks in partitions:
        lw = crp_log_prob_counts([len(b) for b in blocks], gamma0)
        pair_cond = {}
        for block in blocks:
            log_m, cond = table.marginal(block)
            lw += log_m
            pair_cond.update(cond)
        log_weights.append(lw)
        per_partition_pairs.append(pair_cond)

    log_evidence = logsumexp(log_weights)
    pair_probs = {}
    for q in pair_queries:
        total = 0.0
        for lw, cond in zip(log_weights, per_partition_pairs):
            total += math.exp(lw - log_evidence) * cond.get(q, 0.0)
        pair_probs[q] = total

    name_partitions = [
        tuple(tuple(system.relations[k].name for k in block) for block in blocks)
        for blocks in partitions
    ]
    return EnumerationReport(name_partitions, log_weights, log_evidence, pair_probs)


def log_evidence(store, **kwargs):
    """Exact log marginal likelihood of all observations."""
    return enumerate_posterior(store, **kwargs).log_evidence


def exact_fresh_row_logp(store, row, *, gamma0=1.0, gamma=1.0,
                         likelihood_hypers=None, max_configs=10_000_000):
    """Exact posterior predictive log probability of a held-out row.

    `row` is a list of (relation name, value, entity-token tuple) cells where
    tokens starting with `~` denote fresh entities (they must not exist in the
    training store). Computed as the evidence gap between the augmented and
    the base store, which enumerates all joint seatings of the fresh entities.
    """
    system = store.system
    fresh_names = {}

    def materialize(d, token):
        # fresh tokens keep the '~' marker out of the store by renaming
        key = (d, token)
        if key not in fresh_names:
            base = f"__fresh_{token[1:]}"
            name = base
            tick = 0
            while store.lookup(d, name) is not None or name in fresh_names.values():
                tick += 1
                name = f"{base}_{tick}"
            fresh_names[key] = name
        return fresh_names[key]

    extra = []
    for rel_name, value, tokens in row:
        k = system.relation_index(rel_name)
        sig = system.relations[k]
        names = []
        for d, token in zip(sig.domains, tokens):
            if token.startswith("~"):
                names.append(materialize(d, token))
            else:
                if store.lookup(d, token) is None:
                    raise ValueError(
                        f"unknown entity {token!r} in domain {system.domains[d]!r}"
                    )
                names.append(token)
        extra.append((rel_name, value, tuple(names)))
    augmented = store.extended(extra)
    base = log_evidence(store, gamma0=gamma0, gamma=gamma,
                        likelihood_hypers=likelihood_hypers,
                        max_configs=max_configs)
    full = log_evidence(augmented, gamma0=gamma0, gamma=gamma,
                        likelihood_hypers=likelihood_hypers,
                        max_configs=max_configs)
    return full - base


def iter_joint_configurations(store, *, gamma=1.0, gamma0=1.0, families=None,
                              likelihood_hypers=None):
    """Yield every latent configuration with its exact log joint.

    Produces (relation blocks, {(block index, domain): entity clusters},
    log joint) triples; useful for cross-checking incremental scoring.
    """
    system = store.system
    families = _resolve_families(system, families, likelihood_hypers)
    m = system.n_relations
    for blocks in set_partitions(range(m)):
        block_domains = []
        for block in blocks:
            doms = sorted({d for k in block for d in system.relations[k].domains})
            block_domains.append([
                (bi_d, sorted(store.observed_entities(bi_d, block)))
                for bi_d in doms
            ])
        lw0 = crp_log_prob_counts([len(b) for b in blocks], gamma0)
        slots = [
            (bi, d, ents)
            for bi, doms in enumerate(block_domains)
            for d, ents in doms
        ]
        for combo in product(*(set_partitions(ents) for _, _, ents in slots)):
            lp = lw0
            clusters = {}
            assign = {}
            for (bi, d, _ents), parts in zip(slots, combo):
                lp += crp_log_prob_counts([len(b) for b in parts], gamma)
                clusters[(bi, d)] = [list(b) for b in parts]
                table = {}
                for ci, members in enumerate(parts):
                    for e in members:
                        table[e] = ci
                assign[(bi, d)] = table
            for bi, block in enumerate(blocks):
                for k in block:
                    sig = system.relations[k]
                    fam = families[k]
                    groups = {}
                    for tup, v in store.cells[k].items():
                        cell = tuple(
                            assign[(bi, d)][e] for d, e in zip(sig.domains, tup)
                        )
                        groups.setdefault(cell, [0] * fam.codomain_size)[v] += 1
                    if fam.kind == "categorical":
                        for vec in groups.values():
                            lp += fam.marginal_counts(vec)
                    else:
                        for vec in groups.values():
                            lp += fam.marginal_counts(vec[0], vec[1])
            yield [list(b) for b in blocks], clusters, lp
