"""One relation block: per-domain entity partitions plus cluster-cell statistics.

A subsystem owns the entities observed through its member relations, a CRP
partition per participating domain, and one sufficient-statistics bucket per
(relation, cluster-index tuple) cell. Entity assignments move by collapsed
Gibbs; non-conjugate cells carry an explicit theta that travels with the cell.
"""

import math

import numpy as np

from .partition import NEW_TABLE, CrpPartition
from .util import sample_log_weights


class Subsystem:
    """Mutable state of a single IRM over a subset of the system's relations."""

    def __init__(self, store, families, entity_gamma):
        self.store = store
        self.system = store.system
        self.families = families
        self.entity_gamma = entity_gamma
        self.relations = set()
        self.partitions = {}
        self.cells = {}
        self.incorporated = {}

    def domains(self):
        """Domain indexes appearing in any member relation's signature."""
        out = set()
        for k in self.relations:
            out.update(self.system.relations[k].domains)
        return out

    def register_relation(self, k):
        """Add k to the member set and materialize partitions for its domains."""
        self.relations.add(k)
        self.cells.setdefault(k, {})
        self.incorporated.setdefault(k, set())
        for d in self.system.domains_of(k):
            if d not in self.partitions:
                self.partitions[d] = CrpPartition(self.entity_gamma)

    def cluster_key(self, k, tup):
        sig = self.system.relations[k]
        parts = self.partitions
        return tuple(parts[d].assignment[e] for d, e in zip(sig.domains, tup))

    def ensure_entity(self, d, e, rng):
        """Seat an entity by the CRP predictive if it is not assigned yet."""
        part = self.partitions[d]
        if e not in part.assignment:
            part.sample_seat(e, rng)

    def incorporate_tuple(self, k, tup, value, rng, theta=None):
        """Route one observed cell of member relation k to its cluster cell.

        Entities are seated by the CRP predictive on first contact. For a
        non-conjugate relation whose destination cell does not exist yet, theta
        is taken from the argument or drawn from the prior.
        """
        if k not in self.relations:
            raise ValueError(f"relation {k} is not a member of this subsystem")
        if tup in self.incorporated[k]:
            raise ValueError(f"tuple {tup} of relation {k} already incorporated")
        if self.store.cells[k].get(tup) != value:
            raise ValueError(f"tuple {tup} of relation {k} is not observed as {value}")
        sig = self.system.relations[k]
        for d, e in zip(sig.domains, tup):
            self.ensure_entity(d, e, rng)
        key = self.cluster_key(k, tup)
        fam = self.families[k]
        cell = self.cells[k].get(key)
        if cell is None:
            if fam.conjugate:
                cell = fam.make_stats()
            else:
                cell = fam.make_stats(theta if theta is not None else fam.sample_prior(rng))
            self.cells[k][key] = cell
        fam.incorporate(cell, value)
        self.incorporated[k].add(tup)

    def add_relation(self, k, rng):
        """Register k and incorporate all of its observations in load order."""
        self.register_relation(k)
        for tup, value in self.store.cells[k].items():
            self.incorporate_tuple(k, tup, value, rng)

    def attach_relation_data(self, k, theta_lookup=None):
        """Incorporate k's observations assuming every entity is pre-seated.

        Used when rebuilding a state from explicit cluster assignments; raises
        if an observed entity is missing from the partitions, or if a
        non-conjugate cell has no theta in `theta_lookup`.
        """
        self.register_relation(k)
        fam = self.families[k]
        sig = self.system.relations[k]
        for tup, value in self.store.cells[k].items():
            for d, e in zip(sig.domains, tup):
                if e not in self.partitions[d].assignment:
                    name = self.store.entity_name(d, e)
                    raise ValueError(
                        f"entity {name!r} of domain {self.system.domains[d]!r} "
                        "is observed but not assigned to a cluster"
                    )
            key = self.cluster_key(k, tup)
            cell = self.cells[k].get(key)
            if cell is None:
                if fam.conjugate:
                    cell = fam.make_stats()
                else:
                    if theta_lookup is None or key not in theta_lookup:
                        raise ValueError(
                            f"missing theta for cell {key} of relation "
                            f"{sig.name!r}"
                        )
                    cell = fam.make_stats(theta_lookup[key])
                self.cells[k][key] = cell
            fam.incorporate(cell, value)
            self.incorporated[k].add(tup)

    def detach_cells(self, k):
        """Strip k's cells (for candidate evaluation), leaving membership intact."""
        return self.cells.pop(k), self.incorporated.pop(k)

    def attach_cells(self, k, payload):
        cells, incorporated = payload
        self.cells[k] = cells
        self.incorporated[k] = incorporated

    def drop_relation(self, k):
        """Remove k from membership and prune entities/domains it alone supported.

        Call after detach_cells. Entities observed only through k leave their
        partitions; domains mentioned only by k's signature are dropped.
        """
        self.relations.discard(k)
        self.cells.pop(k, None)
        self.incorporated.pop(k, None)
        sig = self.system.relations[k]
        remaining_domains = self.domains()
        for d in sorted(set(sig.domains)):
            if d not in remaining_domains:
                del self.partitions[d]
                continue
            part = self.partitions[d]
            seen = set()
            for pos, dom in enumerate(sig.domains):
                if dom != d:
                    continue
                for tup in self.store.cells[k]:
                    e = tup[pos]
                    if e in seen or e not in part.assignment:
                        continue
                    seen.add(e)
                    if not self.store.entity_cells(d, e, self.relations):
                        part.unseat(e)

    def _dest_theta(self, k, key, removed_thetas, old_table, aux_key, aux_thetas, rng):
        """Theta for a non-conjugate destination cell that is not live.

        Cells emptied by the current unincorporation keep their theta and serve
        as the auxiliary parameters when the move would recreate them (directly
        for the stay candidate, relabeled for the fresh-table candidate of a
        singleton entity); anything else draws fresh from the prior.
        """
        got = removed_thetas.get((k, key))
        if got is not None:
            return got
        if NEW_TABLE in key:
            translated = tuple(old_table if t == NEW_TABLE else t for t in key)
            got = removed_thetas.get((k, translated))
            if got is not None:
                return got
        full_key = (aux_key, k, key)
        if full_key not in aux_thetas:
            aux_thetas[full_key] = self.families[k].sample_prior(rng)
        return aux_thetas[full_key]

    def gibbs_entity(self, d, e, rng):
        """Collapsed Gibbs move of one entity across existing tables plus a fresh one.

        The entity's tuples are unincorporated, each candidate table is scored
        by CRP weight plus the joint predictive of those tuples in their
        destination cells (chained when several land in one cell; tuples where
        the entity repeats across positions are scored once), and the entity is
        reseated from the normalized weights.
        """
        part = self.partitions[d]
        store_cells = self.store.cells
        entity_tuples = self.store.entity_cells(d, e, self.relations)

        removed_thetas = {}
        for k, tup in entity_tuples:
            key = self.cluster_key(k, tup)
            fam = self.families[k]
            cellmap = self.cells[k]
            cell = cellmap[key]
            fam.unincorporate(cell, store_cells[k][tup])
            self.incorporated[k].discard(tup)
            if cell.total == 0:
                if not fam.conjugate:
                    removed_thetas[(k, key)] = cell.theta
                del cellmap[key]
        old_table = part.unseat(e)

        candidates = sorted(part.tables)
        candidates.append(NEW_TABLE)
        tables = part.tables
        gamma = part.concentration
        sigs = self.system.relations
        parts = self.partitions
        aux_thetas = {}
        log_w = []
        for cand in candidates:
            if cand == NEW_TABLE:
                w = math.log(gamma)
            else:
                w = math.log(len(tables[cand]))
            groups = {}
            for k, tup in entity_tuples:
                sig = sigs[k]
                key = tuple(
                    cand if (dp == d and ep == e) else parts[dp].assignment[ep]
                    for dp, ep in zip(sig.domains, tup)
                )
                groups.setdefault((k, key), []).append(store_cells[k][tup])
            for (k, key), values in groups.items():
                fam = self.families[k]
                cell = self.cells[k].get(key)
                if fam.conjugate:
                    w += fam.seq_logp_stats(cell, values)
                else:
                    if cell is not None:
                        theta = cell.theta
                    else:
                        theta = self._dest_theta(
                            k, key, removed_thetas, old_table, cand, aux_thetas, rng
                        )
                    n1 = sum(values)
                    n0 = len(values) - n1
                    w += n1 * math.log(theta) + n0 * math.log1p(-theta)
            log_w.append(w)

        chosen = candidates[sample_log_weights(rng, log_w)]
        new_table = part.seat(e, chosen)
        for k, tup in entity_tuples:
            key = self.cluster_key(k, tup)
            fam = self.families[k]
            cell = self.cells[k].get(key)
            if cell is None:
                if fam.conjugate:
                    cell = fam.make_stats()
                else:
                    sig = sigs[k]
                    eval_key = tuple(
                        chosen if (dp == d and ep == e) else parts[dp].assignment[ep]
                        for dp, ep in zip(sig.domains, tup)
                    )
                    theta = self._dest_theta(
                        k, eval_key, removed_thetas, old_table, chosen, aux_thetas, rng
                    )
                    cell = fam.make_stats(theta)
                self.cells[k][key] = cell
            fam.incorporate(cell, store_cells[k][tup])
            self.incorporated[k].add(tup)
        return new_table

    def gibbs_entity_sweep(self, d, rng):
        """One collapsed-Gibbs pass over domain d's entities in ascending order.

        Blocks whose member relations are all unary beta-Bernoulli over d run
        a vectorized sweep on per-table count matrices (the object-attribute
        benchmark shape); everything else takes the per-entity kernel. Both
        paths compute the same weights.
        """
        part = self.partitions[d]
        if not part.assignment:
            return
        if self._all_unary_bernoulli(d):
            self._sweep_unary_bernoulli(d, rng)
        else:
            for e in sorted(part.assignment):
                self.gibbs_entity(d, e, rng)

    def _all_unary_bernoulli(self, d):
        if set(self.partitions) != {d} or not self.relations:
            return False
        for k in self.relations:
            if self.system.relations[k].domains != (d,):
                return False
            if self.families[k].kind != "bernoulli":
                return False
        return True

    def _sweep_unary_bernoulli(self, d, rng):
        part = self.partitions[d]
        rels = sorted(self.relations)
        n_rel = len(rels)
        alphas = np.array([self.families[k].alpha for k in rels])
        betas = np.array([self.families[k].beta for k in rels])
        ab = alphas + betas
        log_fresh1 = np.log(alphas / ab)
        log_fresh0 = np.log(betas / ab)
        gamma = part.concentration

        ents = sorted(part.assignment)
        pos = {e: i for i, e in enumerate(ents)}
        n_ent = len(ents)
        v1 = np.zeros((n_ent, n_rel), dtype=np.int64)
        v0 = np.zeros((n_ent, n_rel), dtype=np.int64)
        for ri, k in enumerate(rels):
            for tup, value in self.store.cells[k].items():
                i = pos.get(tup[0])
                if i is None:
                    continue
                if value:
                    v1[i, ri] = 1
                else:
                    v0[i, ri] = 1
        m1 = v1.astype(float)
        m0 = v0.astype(float)

        tables = sorted(part.tables)
        slot_of = {t: j for j, t in enumerate(tables)}
        cap = len(tables) + 8
        counts = np.zeros(cap, dtype=np.int64)
        n1 = np.zeros((cap, n_rel), dtype=np.int64)
        n0 = np.zeros((cap, n_rel), dtype=np.int64)
        w1 = np.zeros((cap, n_rel))
        w0 = np.zeros((cap, n_rel))
        log_count = np.full(cap, -np.inf)
        for t, j in slot_of.items():
            counts[j] = len(part.tables[t])
        for ri, k in enumerate(rels):
            for key, cell in self.cells[k].items():
                j = slot_of[key[0]]
                n1[j, ri] = cell.n1
                n0[j, ri] = cell.n0
        used = len(tables)

        def refresh(j):
            if counts[j] > 0:
                log_count[j] = math.log(counts[j])
                denom = np.log(ab + n1[j] + n0[j])
                w1[j] = np.log(alphas + n1[j]) - denom
                w0[j] = np.log(betas + n0[j]) - denom
            else:
                log_count[j] = -np.inf

        for j in range(used):
            refresh(j)

        cur = np.empty(n_ent, dtype=np.int64)
        for e, i in pos.items():
            cur[i] = slot_of[part.assignment[e]]

        for i in range(n_ent):
            j0 = cur[i]
            counts[j0] -= 1
            n1[j0] -= v1[i]
            n0[j0] -= v0[i]
            refresh(j0)

            live = np.flatnonzero(counts > 0)
            scores = log_count[live] + w1[live] @ m1[i] + w0[live] @ m0[i]
            fresh = math.log(gamma) + log_fresh1 @ m1[i] + log_fresh0 @ m0[i]
            idx = sample_log_weights(rng, [*scores.tolist(), fresh])
            if idx == len(live):
                if used == cap:
                    extra = cap
                    cap *= 2
                    counts = np.concatenate([counts, np.zeros(extra, dtype=np.int64)])
                    n1 = np.vstack([n1, np.zeros((extra, n_rel), dtype=np.int64)])
                    n0 = np.vstack([n0, np.zeros((extra, n_rel), dtype=np.int64)])
                    w1 = np.vstack([w1, np.zeros((extra, n_rel))])
                    w0 = np.vstack([w0, np.zeros((extra, n_rel))])
                    log_count = np.concatenate([log_count, np.full(extra, -np.inf)])
                j = used
                used += 1
            else:
                j = int(live[idx])
            counts[j] += 1
            n1[j] += v1[i]
            n0[j] += v0[i]
            refresh(j)
            cur[i] = j

        # fold the slot arrays back into the partition and cell dictionaries
        live_slots = [j for j in range(used) if counts[j] > 0]
        table_of = {j: li + 1 for li, j in enumerate(live_slots)}
        part.assignment = {e: table_of[cur[pos[e]]] for e in ents}
        part.tables = {table_of[j]: set() for j in live_slots}
        for e in ents:
            part.tables[part.assignment[e]].add(e)
        for ri, k in enumerate(rels):
            fam = self.families[k]
            cellmap = {}
            for j in live_slots:
                if n1[j, ri] or n0[j, ri]:
                    stats = fam.make_stats()
                    stats.n0 = int(n0[j, ri])
                    stats.n1 = int(n1[j, ri])
                    cellmap[(table_of[j],)] = stats
            self.cells[k] = cellmap

    def logp_score(self):
        """Log joint of this block's partitions and incorporated data.

        Conjugate relations contribute collapsed cell marginals; non-conjugate
        cells contribute the prior density of theta plus the likelihood at it.
        """
        lp = 0.0
        for part in self.partitions.values():
            lp += part.log_prob()
        for k in self.relations:
            fam = self.families[k]
            if fam.conjugate:
                for cell in self.cells[k].values():
                    lp += fam.logp_marginal(cell)
            else:
                for cell in self.cells[k].values():
                    lp += fam.log_prior(cell.theta) + fam.logp_theta(cell)
        return lp

    def audit(self):
        """Verify cell statistics and partition membership against the store."""
        for k in self.relations:
            fam = self.families[k]
            expected = {}
            for tup, value in self.store.cells[k].items():
                key = self.cluster_key(k, tup)
                expected.setdefault(key, [0] * fam.codomain_size)[value] += 1
            got = {
                key: self._counts_of(fam, cell) for key, cell in self.cells[k].items()
            }
            if expected != got:
                raise AssertionError(f"cell statistics diverge for relation {k}")
            if self.incorporated[k] != set(self.store.cells[k]):
                raise AssertionError(f"incorporation set diverges for relation {k}")
        for d, part in self.partitions.items():
            observed = set(self.store.observed_entities(d, self.relations))
            if observed - set(part.assignment):
                raise AssertionError(f"unassigned observed entities in domain {d}")
            total = sum(len(m) for m in part.tables.values())
            if total != len(part.assignment):
                raise AssertionError(f"partition counts diverge for domain {d}")

    @staticmethod
    def _counts_of(fam, cell):
        if fam.kind == "categorical":
            return list(cell.counts)
        return [cell.n0, cell.n1]

    def copy(self, families):
        """Deep copy sharing the immutable store, bound to `families`."""
        dup = Subsystem(self.store, families, self.entity_gamma)
        dup.relations = set(self.relations)
        dup.partitions = {d: p.copy() for d, p in self.partitions.items()}
        dup.cells = {
            k: {key: cell.copy() for key, cell in cellmap.items()}
            for k, cellmap in self.cells.items()
        }
        dup.incorporated = {k: set(s) for k, s in self.incorporated.items()}
        return dup
