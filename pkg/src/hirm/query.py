"""Posterior-sample analysis: held-out predictive density, simulation,
imputation, and co-clustering probability matrices.

Query rows reference entities by name; a leading `~` marks a fresh entity that
must not appear in training data. Fresh entities (and known entities the
relevant block has never seen) are marginalized over existing tables plus one
shared fresh table per domain, CRP-weighted; the same `~symbol` denotes the
same fresh entity wherever it recurs within one row's cells of one domain.
"""

import csv
import io
import math
from itertools import product

import numpy as np

from .likelihood import BetaBernoulli, logp_given_theta
from .partition import NEW_TABLE
from .util import logsumexp, sample_log_weights

# The uniform(0,1) prior on the non-conjugate Bernoulli coincides with
# Beta(1,1), giving a closed-form predictive for cells with no theta yet.
_BETA11 = BetaBernoulli(1.0, 1.0)


class QueryRow:
    """One held-out row: a list of (relation, entity tuple, value) cells.

    Tuple items are entity ids (ints, known) or `~`-prefixed symbols (strs,
    fresh). Values are validated against each relation's codomain.
    """

    def __init__(self, cells):
        self.cells = list(cells)

    @classmethod
    def build(cls, store, raw_cells):
        """Resolve (relation name, value, entity token tuple) cells.

        Known tokens must exist in the store; `~` tokens must not collide with
        any trained entity of the same domain.
        """
        system = store.system
        cells = []
        for rel_name, value, tokens in raw_cells:
            k = system.relation_index(rel_name)
            sig = system.relations[k]
            if len(tokens) != sig.arity:
                raise ValueError(
                    f"relation {rel_name!r} expects {sig.arity} entities, "
                    f"got {len(tokens)}"
                )
            v = int(value)
            if not 0 <= v < sig.codomain_size:
                raise ValueError(
                    f"value {v} outside codomain of {rel_name!r}"
                )
            resolved = []
            for d, token in zip(sig.domains, tokens):
                if token.startswith("~"):
                    if store.lookup(d, token) is not None:
                        raise ValueError(
                            f"fresh entity {token!r} collides with training data"
                        )
                    resolved.append(token)
                else:
                    e = store.lookup(d, token)
                    if e is None:
                        raise ValueError(
                            f"unknown entity {token!r} in domain "
                            f"{system.domains[d]!r}"
                        )
                    resolved.append(e)
            cells.append((k, tuple(resolved), v))
        return cls(cells)

    def raw(self, store):
        """Back-translate to (relation name, value, token tuple) cells."""
        system = store.system
        out = []
        for k, tup, v in self.cells:
            sig = system.relations[k]
            tokens = tuple(
                item if isinstance(item, str) else store.entity_name(d, item)
                for d, item in zip(sig.domains, tup)
            )
            out.append((sig.name, v, tokens))
        return out


def parse_query_rows(store, text):
    """Parse a query file: CSV cells `relation,value,entity,...`, rows
    separated by blank lines, `#` comment lines ignored."""
    rows = []
    stanza = []

    def flush():
        nonlocal stanza
        if stanza:
            rows.append(QueryRow.build(store, stanza))
            stanza = []

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            continue
        parsed = next(csv.reader(io.StringIO(line)))
        if len(parsed) < 3:
            raise ValueError(f"bad query cell {line!r}")
        stanza.append(
            (parsed[0].strip(), parsed[1].strip(),
             tuple(p.strip() for p in parsed[2:]))
        )
    flush()
    return rows


def _chain_logp(fam, base_stats, prev_values, value):
    """Predictive of `value` given cell stats plus already-asserted row values."""
    return fam.seq_logp_stats(base_stats, prev_values + [value]) - (
        fam.seq_logp_stats(base_stats, prev_values) if prev_values else 0.0
    )


def _subsystem_row_logp(state, sub, cells):
    """Joint log probability of one block's share of a row, marginalizing
    fresh (and locally unseen) entities over seatings."""
    system = state.system

    var_keys = []
    seen = set()
    for k, tup, _v in cells:
        sig = system.relations[k]
        for d, item in zip(sig.domains, tup):
            part = sub.partitions.get(d) if sub is not None else None
            is_var = isinstance(item, str) or part is None or item not in part.assignment
            if is_var and (d, item) not in seen:
                seen.add((d, item))
                var_keys.append((d, item))

    options = []
    for d, _item in var_keys:
        part = sub.partitions.get(d) if sub is not None else None
        tabs = sorted(part.tables) if part is not None else []
        options.append(tabs + [NEW_TABLE])

    weights = []
    for combo in product(*options):
        overlay = dict(zip(var_keys, combo))
        crp_lw = 0.0
        dstate = {}
        for (d, _item), pick in zip(var_keys, combo):
            part = sub.partitions.get(d) if sub is not None else None
            gamma = part.concentration if part is not None else state.entity_gamma
            st = dstate.setdefault(
                d, {"n": part.n_items if part is not None else 0,
                    "extra": {}, "fresh": 0}
            )
            denom = gamma + st["n"]
            if pick == NEW_TABLE:
                num = gamma if st["fresh"] == 0 else st["fresh"]
                st["fresh"] += 1
            else:
                num = len(part.tables[pick]) + st["extra"].get(pick, 0)
                st["extra"][pick] = st["extra"].get(pick, 0) + 1
            crp_lw += math.log(num / denom)
            st["n"] += 1

        cell_lw = 0.0
        pending = {}
        for k, tup, v in cells:
            sig = system.relations[k]
            key_parts = []
            for d, item in zip(sig.domains, tup):
                pick = overlay.get((d, item))
                if pick is None:
                    pick = sub.partitions[d].assignment[item]
                key_parts.append(pick)
            key = tuple(key_parts)
            fam = state.families[k]
            live = None
            if sub is not None and NEW_TABLE not in key:
                live = sub.cells.get(k, {}).get(key)
            prev = pending.setdefault((k, key), [])
            if fam.conjugate:
                cell_lw += _chain_logp(fam, live, prev, v)
            elif live is not None:
                cell_lw += logp_given_theta(v, live.theta)
            else:
                cell_lw += _chain_logp(_BETA11, None, prev, v)
            prev.append(v)
        weights.append(crp_lw + cell_lw)
    return logsumexp(weights)


def predictive_logp(state, row):
    """Log probability of a row's values jointly under one posterior state.

    Cells factor across blocks; within a block, fresh entities are summed over
    joint seatings (existing tables plus one shared fresh table per domain)
    with sequential CRP weights, and repeated destination cells chain.
    """
    if not row.cells:
        return 0.0
    by_table = {}
    for cell in row.cells:
        table = state.rel_partition.assignment[cell[0]]
        by_table.setdefault(table, []).append(cell)
    total = 0.0
    for table in sorted(by_table):
        total += _subsystem_row_logp(state, state.subsystems[table], by_table[table])
    return total


class Ensemble:
    """Equally weighted posterior state snapshots over one relational system."""

    def __init__(self, states):
        states = list(states)
        if not states:
            raise ValueError("an ensemble needs at least one state")
        system = states[0].system
        for s in states[1:]:
            if s.system is not system:
                raise ValueError("ensemble states must share one relational system")
        self.states = states

    @classmethod
    def from_files(cls, store, paths, hyper_kernel=True):
        from .hirm import HirmState

        states = []
        for path in paths:
            with open(path, "r", encoding="utf-8") as fh:
                states.append(HirmState.from_json(store, fh.read(),
                                                  hyper_kernel=hyper_kernel))
        return cls(states)

    def __len__(self):
        return len(self.states)


def ensemble_logp(ensemble, row):
    """Log of the arithmetic mean of per-state row probabilities."""
    lps = [predictive_logp(state, row) for state in ensemble.states]
    return logsumexp(lps) - math.log(len(lps))


def simulate(state, relation, tokens, rng):
    """Draw one value for a cell, sampling seats for fresh entities first."""
    system = state.system
    k = relation if isinstance(relation, int) else system.relation_index(relation)
    sig = system.relations[k]
    fam = state.families[k]
    sub = state.subsystem_of(k)

    key_parts = []
    overlay = {}
    for d, item in zip(sig.domains, tokens):
        if isinstance(item, str) and not item.startswith("~"):
            looked = state.store.lookup(d, item)
            if looked is None:
                raise ValueError(f"unknown entity {item!r}")
            item = looked
        part = sub.partitions.get(d)
        if isinstance(item, int) and part is not None and item in part.assignment:
            key_parts.append(part.assignment[item])
            continue
        ov_key = (d, item)
        if ov_key not in overlay:
            tabs = sorted(part.tables) if part is not None else []
            gamma = part.concentration if part is not None else state.entity_gamma
            n = part.n_items if part is not None else 0
            log_w = [math.log(len(part.tables[t]) / (gamma + n)) for t in tabs]
            tabs.append(NEW_TABLE)
            log_w.append(math.log(gamma / (gamma + n)))
            overlay[ov_key] = tabs[sample_log_weights(rng, log_w)]
        key_parts.append(overlay[ov_key])
    key = tuple(key_parts)

    live = None
    if NEW_TABLE not in key:
        live = sub.cells.get(k, {}).get(key)
    log_w = []
    for v in range(fam.codomain_size):
        if fam.conjugate:
            log_w.append(fam.seq_logp_stats(live, [v]))
        elif live is not None:
            log_w.append(logp_given_theta(v, live.theta))
        else:
            log_w.append(_BETA11.seq_logp_stats(None, [v]))
    return sample_log_weights(rng, log_w)


def impute(ensemble, relation, tokens):
    """Codomain value maximizing the ensemble-averaged predictive, with its
    probability."""
    system = ensemble.states[0].system
    store = ensemble.states[0].store
    k = relation if isinstance(relation, int) else system.relation_index(relation)
    fam = ensemble.states[0].families[k]
    best = None
    for v in range(fam.codomain_size):
        row = QueryRow.build(store, [(system.relations[k].name, v, tokens)])
        lp = ensemble_logp(ensemble, row)
        if best is None or lp > best[1]:
            best = (v, lp)
    return best[0], math.exp(best[1])


def cocluster_matrix(ensemble, domain, context_relation):
    """Posterior co-clustering probabilities for a domain within the block
    holding `context_relation`.

    Returns (entity names, matrix); entry (a, b) is the fraction of states in
    which both entities share a table there, with a unit diagonal. Entities a
    block never observed co-cluster with nothing (but themselves).
    """
    state0 = ensemble.states[0]
    system = state0.system
    store = state0.store
    d = domain if isinstance(domain, int) else system.domain_index(domain)
    ck = (context_relation if isinstance(context_relation, int)
          else system.relation_index(context_relation))
    if d not in system.relations[ck].domains:
        raise ValueError(
            f"domain {system.domains[d]!r} does not participate in relation "
            f"{system.relations[ck].name!r}"
        )
    n = store.n_entities(d)
    acc = np.zeros((n, n))
    for state in ensemble.states:
        sub = state.subsystem_of(ck)
        part = sub.partitions.get(d)
        vec = np.full(n, -1, dtype=int)
        if part is not None:
            for e, t in part.assignment.items():
                vec[e] = t
        same = (vec[:, None] == vec[None, :]) & (vec[:, None] >= 0)
        acc += same
    mat = acc / len(ensemble.states)
    np.fill_diagonal(mat, 1.0)
    return [store.entity_name(d, e) for e in range(n)], mat
