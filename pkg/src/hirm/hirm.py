"""Full model state: top-level CRP over relations and one IRM per block.

The Markov chain state bundles the relation partition, every block's entity
partitions and cell statistics, all hyperparameters, and the seeded generator.
Kernels: auxiliary-variable Gibbs for relation assignments (one fresh block
candidate, with the singleton's own block standing in as the auxiliary),
collapsed Gibbs for entities, reflected-drift Metropolis for non-conjugate
cell parameters, and gridded Gibbs for hyperparameters under Exponential(1)
hyperpriors.
"""

import json
import math

import numpy as np
from scipy.special import betaln

from .irm import Subsystem
from .likelihood import make_family
from .partition import NEW_TABLE, CrpPartition, crp_log_prob_counts
from .util import debug_audits_enabled, make_rng, sample_log_weights

STATE_VERSION = 1

# Sentinel for the freshly drawn block candidate in the relation kernel.
_AUX = None

_GRID_SIZE = 30


def _log_grid(bound):
    return np.exp(np.linspace(-math.log(bound), math.log(bound), _GRID_SIZE))


class HirmState:
    """Latent state of one chain; exclusively owned, single-threaded mutation."""

    def __init__(self, store, families, *, mode="hirm", gamma0=1.0,
                 entity_gamma=1.0, rng=None, seed=None, hyper_kernel=True):
        if mode not in ("hirm", "irm"):
            raise ValueError(f"unknown mode {mode!r}")
        self.store = store
        self.system = store.system
        self.families = families
        self.mode = mode
        self.entity_gamma = entity_gamma
        self.rel_partition = CrpPartition(gamma0)
        self.subsystems = {}
        self.rng = rng if rng is not None else make_rng(seed)
        self.seed = seed
        self.hyper_kernel = hyper_kernel
        self.scan_count = 0

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def from_prior(cls, store, *, seed=None, rng=None, mode="hirm", gamma0=1.0,
                   entity_gamma=1.0, likelihood_hypers=None, hyper_kernel=True):
        """Initialize by sampling the latent structure from the prior.

        Relations are seated by sequential CRP draws (pinned to one block in
        irm mode), then each relation's observations are incorporated in load
        order, seating entities by the CRP predictive on first contact.
        """
        system = store.system
        overrides = likelihood_hypers or {}
        families = [
            make_family(sig, overrides.get(sig.name)) for sig in system.relations
        ]
        state = cls(store, families, mode=mode, gamma0=gamma0,
                    entity_gamma=entity_gamma, rng=rng, seed=seed,
                    hyper_kernel=hyper_kernel)
        m = system.n_relations
        if mode == "irm":
            table = state.rel_partition.seat(0)
            for k in range(1, m):
                state.rel_partition.seat(k, table)
        else:
            for k in range(m):
                state.rel_partition.sample_seat(k, state.rng)
        for k in range(m):
            table = state.rel_partition.assignment[k]
            sub = state.subsystems.get(table)
            if sub is None:
                sub = Subsystem(store, families, entity_gamma)
                state.subsystems[table] = sub
            sub.add_relation(k, state.rng)
        return state

    @classmethod
    def from_configuration(cls, store, relation_blocks, entity_clusters, *,
                           gamma0=1.0, entity_gamma=1.0, block_domain_gamma=None,
                           families=None, likelihood_hypers=None, thetas=None,
                           mode="hirm", hyper_kernel=True, seed=None, rng=None,
                           scan_count=0):
        """Build a state at an explicit latent configuration.

        relation_blocks: partition of all relations (names or indexes).
        entity_clusters: {(block_index, domain): list of entity-id clusters};
        cluster labels are their 1-based positions, which is how `thetas`
        ({(block_index, relation): {label tuple: theta}}) addresses cells.
        """
        system = store.system
        if families is None:
            overrides = likelihood_hypers or {}
            families = [
                make_family(sig, overrides.get(sig.name)) for sig in system.relations
            ]
        state = cls(store, families, mode=mode, gamma0=gamma0,
                    entity_gamma=entity_gamma, rng=rng, seed=seed,
                    hyper_kernel=hyper_kernel)
        blocks = [
            [r if isinstance(r, int) else system.relation_index(r) for r in block]
            for block in relation_blocks
        ]
        flat = sorted(k for block in blocks for k in block)
        if flat != list(range(system.n_relations)):
            raise ValueError("relation blocks must partition the relation set")
        if mode == "irm" and len(blocks) != 1:
            raise ValueError("irm mode requires a single relation block")

        clusters_by_key = {}
        for (bi, dom), clusters in (entity_clusters or {}).items():
            d = dom if isinstance(dom, int) else system.domain_index(dom)
            clusters_by_key[(bi, d)] = clusters
        gammas_by_key = {}
        for (bi, dom), g in (block_domain_gamma or {}).items():
            d = dom if isinstance(dom, int) else system.domain_index(dom)
            gammas_by_key[(bi, d)] = g
        thetas_by_key = {}
        for (bi, rel), cellmap in (thetas or {}).items():
            k = rel if isinstance(rel, int) else system.relation_index(rel)
            thetas_by_key[(bi, k)] = {tuple(key): th for key, th in cellmap.items()}

        for bi, block in enumerate(blocks):
            table = state.rel_partition.seat(block[0], NEW_TABLE)
            for k in block[1:]:
                state.rel_partition.seat(k, table)
            sub = Subsystem(store, families, entity_gamma)
            state.subsystems[table] = sub
            for k in block:
                sub.register_relation(k)
            for d in sorted(sub.partitions):
                part = sub.partitions[d]
                if (bi, d) in gammas_by_key:
                    part.concentration = gammas_by_key[(bi, d)]
                for cluster in clusters_by_key.get((bi, d), []):
                    cluster = list(cluster)
                    tid = part.seat(cluster[0], NEW_TABLE)
                    for e in cluster[1:]:
                        part.seat(e, tid)
            for k in sorted(block):
                sub.attach_relation_data(k, thetas_by_key.get((bi, k)))
        state.scan_count = scan_count
        return state

    # ------------------------------------------------------------------
    # bookkeeping helpers

    def subsystem_of(self, k):
        return self.subsystems[self.rel_partition.assignment[k]]

    def relation_blocks(self):
        """Canonical relation partition as tuples of relation names."""
        return tuple(
            tuple(self.system.relations[k].name for k in block)
            for block in self.rel_partition.canonical_blocks()
        )

    def n_blocks(self):
        return self.rel_partition.n_tables

    def logp_full(self):
        """Log joint of the relation partition and every block's contribution."""
        lp = self.rel_partition.log_prob()
        for sub in self.subsystems.values():
            lp += sub.logp_score()
        return lp

    # ------------------------------------------------------------------
    # relation-cluster kernel

    def gibbs_relation(self, k):
        """Resample relation k's block by the auxiliary-variable Gibbs kernel.

        The relation's cells are detached; every existing block is a candidate
        (plus one freshly drawn block when k is not a singleton, the singleton's
        own block otherwise playing the auxiliary role with weight gamma0).
        Candidate weights multiply the CRP factor by the relation's collapsed
        marginal (or explicit-theta likelihood) under the candidate's entity
        partitions; entities the candidate has never seen are seated by
        sequential CRP predictive draws before evaluation. All draws consume
        the generator stream in a fixed order regardless of the outcome.
        """
        rng = self.rng
        system = self.system
        store = self.store
        rp = self.rel_partition
        l0 = rp.assignment[k]
        sub0 = self.subsystems[l0]
        singleton = len(rp.tables[l0]) == 1
        gamma0 = rp.concentration
        fam = self.families[k]
        sig = system.relations[k]
        codomain = fam.codomain_size
        rel_cells = store.cells[k]

        detached = sub0.detach_cells(k)
        detached_cells = detached[0]

        rel_domains = system.domains_of(k)
        ents_by_domain = {d: [] for d in rel_domains}
        seen = {d: set() for d in rel_domains}
        for tup in rel_cells:
            for dp, ep in zip(sig.domains, tup):
                if ep not in seen[dp]:
                    seen[dp].add(ep)
                    ents_by_domain[dp].append(ep)

        candidates = sorted(rp.tables)
        if not singleton:
            candidates.append(_AUX)

        # unary conjugate-Bernoulli relations (the object-attribute encoding)
        # score candidates through vectorized per-table counts
        unary_fast = fam.conjugate and fam.kind == "bernoulli" and sig.arity == 1
        if unary_fast:
            ents_arr = np.fromiter(
                (tup[0] for tup in rel_cells), dtype=np.int64, count=len(rel_cells)
            )
            vals_arr = np.fromiter(
                rel_cells.values(), dtype=np.float64, count=len(rel_cells)
            )

        log_w = []
        evaluations = []
        for cand in candidates:
            target = self.subsystems.get(cand) if cand is not _AUX else None

            # Seat entities the candidate's partitions lack (all of them for
            # the fresh block); temp ids are negative until the move commits.
            overlay = {}
            seatings = []
            next_temp = -2
            for d in rel_domains:
                part = target.partitions.get(d) if target is not None else None
                if part is not None:
                    counts = {t: len(ms) for t, ms in part.tables.items()}
                    assigned = part.assignment
                    gamma = part.concentration
                else:
                    counts = {}
                    assigned = {}
                    gamma = self.entity_gamma
                for e in ents_by_domain[d]:
                    if e in assigned:
                        continue
                    tabs = sorted(counts)
                    weights = [math.log(counts[t]) for t in tabs]
                    tabs.append(NEW_TABLE)
                    weights.append(math.log(gamma))
                    pick = tabs[sample_log_weights(rng, weights)]
                    if pick == NEW_TABLE:
                        pick = next_temp
                        next_temp -= 1
                        counts[pick] = 1
                    else:
                        counts[pick] += 1
                    overlay[(d, e)] = pick
                    seatings.append((d, e, pick))

            if singleton:
                crp_c = gamma0 if cand == l0 else len(rp.tables[cand])
            elif cand is _AUX:
                crp_c = gamma0
            elif cand == l0:
                crp_c = len(rp.tables[l0]) - 1
            else:
                crp_c = len(rp.tables[cand])
            w = math.log(crp_c)

            groups = None
            thetas = {}
            if unary_fast:
                d_un = sig.domains[0]
                vec = np.full(store.n_entities(d_un), -1, dtype=np.int64)
                if target is not None:
                    part = target.partitions.get(d_un)
                    if part is not None:
                        for e, t in part.assignment.items():
                            vec[e] = t
                for _d, e, t in seatings:
                    vec[e] = t
                labels = vec[ents_arr]
                _uniq, inv = np.unique(labels, return_inverse=True)
                total = np.bincount(inv).astype(float)
                ones = np.bincount(inv, weights=vals_arr)
                w += float(np.sum(
                    betaln(fam.alpha + ones, fam.beta + (total - ones))
                    - betaln(fam.alpha, fam.beta)
                ))
            else:
                groups = self._group_relation_cells(k, target, overlay)
                if fam.conjugate:
                    if fam.kind == "categorical":
                        for counts_vec in groups.values():
                            w += fam.marginal_counts(counts_vec)
                    else:
                        for counts_vec in groups.values():
                            w += fam.marginal_counts(counts_vec[0], counts_vec[1])
                else:
                    for key, counts_vec in groups.items():
                        if cand == l0 and key in detached_cells:
                            theta = detached_cells[key].theta
                        else:
                            theta = fam.sample_prior(rng)
                        thetas[key] = theta
                        if counts_vec[1]:
                            w += counts_vec[1] * math.log(theta)
                        if counts_vec[0]:
                            w += counts_vec[0] * math.log1p(-theta)
            log_w.append(w)
            evaluations.append((seatings, groups, thetas))

        idx = sample_log_weights(rng, log_w)
        chosen = candidates[idx]
        if chosen == l0:
            sub0.attach_cells(k, detached)
            return l0

        seatings, groups, thetas = evaluations[idx]
        if groups is None:
            target = self.subsystems.get(chosen) if chosen is not _AUX else None
            overlay = {(dd, e): t for dd, e, t in seatings}
            groups = self._group_relation_cells(k, target, overlay)
        rp.unseat(k)
        sub0.drop_relation(k)
        if not sub0.relations:
            del self.subsystems[l0]
        if chosen is _AUX:
            table = rp.seat(k, NEW_TABLE)
            target = Subsystem(store, self.families, self.entity_gamma)
            self.subsystems[table] = target
        else:
            table = chosen
            rp.seat(k, table)
            target = self.subsystems[table]
        target.register_relation(k)

        temp_map = {}
        for d, e, t in seatings:
            part = target.partitions[d]
            if t < 0:
                real = temp_map.get(t)
                if real is None:
                    temp_map[t] = part.seat(e, NEW_TABLE)
                else:
                    part.seat(e, real)
            else:
                part.seat(e, t)

        cellmap = target.cells[k]
        for eval_key, vec in groups.items():
            real_key = tuple(temp_map.get(t, t) for t in eval_key)
            if fam.conjugate:
                cell = fam.make_stats()
                if fam.kind == "categorical":
                    cell.counts = list(vec)
                else:
                    cell.n0, cell.n1 = vec[0], vec[1]
            else:
                cell = fam.make_stats(thetas[eval_key])
                cell.n0, cell.n1 = vec[0], vec[1]
            cellmap[real_key] = cell
        target.incorporated[k].update(rel_cells)
        return table

    # ------------------------------------------------------------------
    # parameter and hyperparameter kernels

    def mh_theta(self, table, k, key):
        """One reflected Gaussian-drift Metropolis move on a cell's theta.

        The reflected proposal is symmetric and the prior is uniform, so the
        acceptance ratio reduces to the likelihood ratio at the two thetas.
        """
        fam = self.families[k]
        cell = self.subsystems[table].cells[k][key]
        rng = self.rng
        proposal = fam.propose(cell.theta, rng)
        log_ratio = (
            fam.log_prior(proposal) + fam.logp_theta(cell, proposal)
            - fam.log_prior(cell.theta) - fam.logp_theta(cell)
        )
        u = rng.random()
        accept = log_ratio >= 0.0 or u < math.exp(log_ratio)
        if accept:
            cell.theta = proposal
        return accept

    def _resample_concentration(self, block_counts, n_items):
        grid = _log_grid(max(n_items, 2) * 10)
        counts = list(block_counts)
        log_w = [-g + crp_log_prob_counts(counts, g) for g in grid]
        return float(grid[sample_log_weights(self.rng, log_w)])

    def transition_hypers(self):
        """Gridded Gibbs over concentrations and conjugate likelihood hypers.

        Each scalar is resampled from a 30-point log-spaced grid on [1/G, G],
        G = 10*max(governed count, 2), weighting Exponential(1) prior density
        by the conditional score term the scalar governs.
        """
        if self.mode == "hirm":
            counts = [len(ms) for ms in self.rel_partition.tables.values()]
            self.rel_partition.concentration = self._resample_concentration(
                counts, self.system.n_relations
            )
        for table in sorted(self.subsystems):
            sub = self.subsystems[table]
            for d in sorted(sub.partitions):
                part = sub.partitions[d]
                counts = [len(ms) for ms in part.tables.values()]
                part.concentration = self._resample_concentration(
                    counts, part.n_items
                )
        for k in range(self.system.n_relations):
            fam = self.families[k]
            if not fam.hyper_names:
                continue
            stats_list = list(self.subsystem_of(k).cells[k].values())
            n_obs = len(self.store.cells[k])
            grid = _log_grid(max(n_obs, 2) * 10)
            for name in fam.hyper_names:
                if stats_list:
                    data = fam.grid_data_terms(stats_list, name, grid)
                else:
                    data = np.zeros(len(grid))
                log_w = (data - grid).tolist()
                setattr(fam, name, float(grid[sample_log_weights(self.rng, log_w)]))

    # ------------------------------------------------------------------
    # full scan

    def gibbs_scan(self):
        """One full sweep: relation blocks, then per block entities and thetas,
        then hyperparameters. Returns self for chaining."""
        if self.mode == "hirm":
            for k in range(self.system.n_relations):
                self.gibbs_relation(k)
        for table in sorted(self.subsystems):
            sub = self.subsystems[table]
            for d in sorted(sub.partitions):
                sub.gibbs_entity_sweep(d, self.rng)
            for k in sorted(sub.relations):
                if self.families[k].conjugate:
                    continue
                for key in sorted(sub.cells[k]):
                    self.mh_theta(table, k, key)
        if self.hyper_kernel:
            self.transition_hypers()
        self.scan_count += 1
        if debug_audits_enabled():
            self.audit()
        return self

    def audit(self):
        """Cross-check membership, cell statistics, and score finiteness."""
        assigned = dict(self.rel_partition.assignment)
        if sorted(assigned) != list(range(self.system.n_relations)):
            raise AssertionError("relation partition does not cover all relations")
        if set(self.rel_partition.tables) != set(self.subsystems):
            raise AssertionError("subsystem tables diverge from relation partition")
        for table, members in self.rel_partition.tables.items():
            if members != self.subsystems[table].relations:
                raise AssertionError(f"membership diverges for block {table}")
        for sub in self.subsystems.values():
            sub.audit()
            if set(sub.partitions) != sub.domains():
                raise AssertionError("subsystem stores domains outside its signature set")
        if not math.isfinite(self.logp_full()):
            raise AssertionError("non-finite joint score")

    # ------------------------------------------------------------------
    # snapshots and serialization

    def clone(self):
        """Independent deep copy sharing the immutable store and system."""
        import copy

        families = [copy.copy(f) for f in self.families]
        dup = HirmState(
            self.store, families, mode=self.mode,
            gamma0=self.rel_partition.concentration,
            entity_gamma=self.entity_gamma, rng=copy.deepcopy(self.rng),
            seed=self.seed, hyper_kernel=self.hyper_kernel,
        )
        dup.rel_partition = self.rel_partition.copy()
        dup.subsystems = {
            table: sub.copy(families) for table, sub in self.subsystems.items()
        }
        dup.scan_count = self.scan_count
        return dup

    def to_json(self):
        """Canonical JSON text for the full latent state."""
        system = self.system
        store = self.store
        blocks_out = []
        theta_out = {}
        for i, block in enumerate(self.rel_partition.canonical_blocks(), start=1):
            table = self.rel_partition.assignment[block[0]]
            sub = self.subsystems[table]
            domains_out = {}
            label_maps = {}
            for d in sorted(sub.partitions):
                part = sub.partitions[d]
                clusters = {}
                label_map = {}
                for li, members in enumerate(part.canonical_blocks(), start=1):
                    clusters[str(li)] = [store.entity_name(d, e) for e in members]
                    label_map[part.assignment[members[0]]] = li
                label_maps[d] = label_map
                domains_out[system.domains[d]] = {
                    "gamma": part.concentration,
                    "clusters": clusters,
                }
            rel_names = [system.relations[k].name for k in block]
            blocks_out.append(
                {"id": i, "relations": rel_names, "domains": domains_out}
            )
            for k in block:
                fam = self.families[k]
                if fam.conjugate or not sub.cells[k]:
                    continue
                sig = system.relations[k]
                labeled = sorted(
                    (
                        tuple(label_maps[d][t] for d, t in zip(sig.domains, key)),
                        cell.theta,
                    )
                    for key, cell in sub.cells[k].items()
                )
                theta_out[sig.name] = {
                    ",".join(map(str, labels)): theta for labels, theta in labeled
                }
        obj = {
            "version": STATE_VERSION,
            "seed": self.seed,
            "scan_count": self.scan_count,
            "mode": self.mode,
            "gamma0": self.rel_partition.concentration,
            "relation_blocks": blocks_out,
            "likelihood_hypers": {
                sig.name: fam.to_dict()
                for sig, fam in zip(system.relations, self.families)
            },
            "thetas": theta_out,
        }
        return json.dumps(obj, indent=2) + "\n"

    @classmethod
    def from_json(cls, store, text, hyper_kernel=True):
        """Rebuild a state from its JSON dump plus the original observations."""
        system = store.system
        obj = json.loads(text)
        if obj.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported state version {obj.get('version')!r}")
        blocks = []
        entity_clusters = {}
        block_domain_gamma = {}
        seen = set()
        for bi, block in enumerate(obj["relation_blocks"]):
            rels = []
            for name in block["relations"]:
                k = system.relation_index(name)
                if k in seen:
                    raise ValueError(f"relation {name!r} appears in multiple blocks")
                seen.add(k)
                rels.append(k)
            blocks.append(rels)
            for dom_name, dom in block.get("domains", {}).items():
                d = system.domain_index(dom_name)
                clusters = []
                for label in sorted(dom["clusters"], key=int):
                    members = []
                    for ent_name in dom["clusters"][label]:
                        e = store.lookup(d, ent_name)
                        if e is None:
                            raise ValueError(
                                f"unknown entity {ent_name!r} in domain {dom_name!r}"
                            )
                        members.append(e)
                    clusters.append(members)
                entity_clusters[(bi, d)] = clusters
                block_domain_gamma[(bi, d)] = dom["gamma"]
        if len(seen) != system.n_relations:
            raise ValueError("state does not assign every relation to a block")

        overrides = {}
        for name, hyp in obj.get("likelihood_hypers", {}).items():
            k = system.relation_index(name)
            sig = system.relations[k]
            if hyp.get("family") != sig.kind:
                raise ValueError(
                    f"likelihood family mismatch for relation {name!r}"
                )
            overrides[name] = {
                key: v for key, v in hyp.items() if key not in ("family", "k")
            }

        thetas = {}
        for name, cells in obj.get("thetas", {}).items():
            k = system.relation_index(name)
            bi = next(i for i, block in enumerate(blocks) if k in block)
            thetas[(bi, k)] = {
                tuple(int(x) for x in label.split(",")): th
                for label, th in cells.items()
            }

        return cls.from_configuration(
            store, blocks, entity_clusters,
            gamma0=obj["gamma0"], block_domain_gamma=block_domain_gamma,
            likelihood_hypers=overrides, thetas=thetas,
            mode=obj.get("mode", "hirm"), hyper_kernel=hyper_kernel,
            seed=obj.get("seed"), scan_count=obj.get("scan_count", 0),
        )
