"""Forward sampling from the generative process.

Builds synthetic datasets with known ground-truth structure (for recovery
tests and the `synth` subcommand) and regenerates observations given a state's
latents (the data-replacement half of joint-distribution sampler checks).
"""

import math
from itertools import product

from .hirm import HirmState
from .partition import CrpPartition
from .schema import ObservationStore, parse_schema
from .util import make_rng


def sample_prior_latents(system, entity_counts, *, gamma0=1.0, gamma=1.0,
                         rng, mode="hirm", blocks=None):
    """Draw (relation blocks, entity clusters) from the structural prior.

    entity_counts: per-domain entity count (dict by name/index or list).
    Returns blocks as lists of relation indexes and clusters keyed by
    (block index, domain index). Fixed `blocks` may be supplied to pin the
    relation partition while still drawing entity clusters.
    """
    m = system.n_relations
    counts = _normalize_counts(system, entity_counts)
    if blocks is None:
        if mode == "irm":
            blocks = [list(range(m))]
        else:
            part = CrpPartition.sample(m, gamma0, rng)
            blocks = [list(block) for block in part.canonical_blocks()]
    clusters = {}
    for bi, block in enumerate(blocks):
        domains = sorted({d for k in block for d in system.relations[k].domains})
        for d in domains:
            part = CrpPartition.sample(counts[d], gamma, rng)
            clusters[(bi, d)] = [list(c) for c in part.canonical_blocks()]
    return blocks, clusters


def _normalize_counts(system, entity_counts):
    if isinstance(entity_counts, dict):
        out = {}
        for key, n in entity_counts.items():
            d = key if isinstance(key, int) else system.domain_index(key)
            out[d] = n
        return out
    return dict(enumerate(entity_counts))


def resample_observations(state, rng):
    """New store with fresh values over the same tuples, given the latents.

    Conjugate cells draw value sequences from the collapsed urn (sequential
    predictive from empty counts); non-conjugate cells draw Bernoulli values
    at their current theta. Tuple keys, entity interning, and row order all
    match the input store.
    """
    system = state.system
    store = state.store
    new_values = [dict() for _ in system.relations]
    for k in range(system.n_relations):
        sub = state.subsystem_of(k)
        fam = state.families[k]
        groups = {}
        for tup in store.cells[k]:
            groups.setdefault(sub.cluster_key(k, tup), []).append(tup)
        for key in groups:
            tups = groups[key]
            if fam.conjugate:
                stats = fam.make_stats()
                for tup in tups:
                    weights = [
                        math.exp(fam.logp_predictive(stats, v))
                        for v in range(fam.codomain_size)
                    ]
                    v = _draw(rng, weights)
                    fam.incorporate(stats, v)
                    new_values[k][tup] = v
            else:
                theta = sub.cells[k][key].theta
                draws = rng.random(len(tups))
                for tup, u in zip(tups, draws):
                    new_values[k][tup] = 1 if u < theta else 0
    new_store = ObservationStore(system)
    for k, cells in enumerate(store.cells):
        sig = system.relations[k]
        for tup in cells:
            names = tuple(store.entity_name(d, e) for d, e in zip(sig.domains, tup))
            new_store.add_row(sig.name, new_values[k][tup], names)
    return new_store


def _draw(rng, weights):
    u = rng.random() * sum(weights)
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u <= acc:
            return i
    return len(weights) - 1


def extract_latents(state):
    """Current latents in from_configuration form (canonical labels).

    Returns (blocks, clusters, block_domain_gamma, thetas); clusters use
    1-based labels in canonical order so thetas can address cells.
    """
    blocks = [list(block) for block in state.rel_partition.canonical_blocks()]
    clusters = {}
    gammas = {}
    thetas = {}
    for bi, block in enumerate(blocks):
        table = state.rel_partition.assignment[block[0]]
        sub = state.subsystems[table]
        label_maps = {}
        for d in sorted(sub.partitions):
            part = sub.partitions[d]
            canon = part.canonical_blocks()
            clusters[(bi, d)] = [list(c) for c in canon]
            gammas[(bi, d)] = part.concentration
            label_maps[d] = {
                part.assignment[members[0]]: li
                for li, members in enumerate(canon, start=1)
            }
        for k in block:
            if state.families[k].conjugate or not sub.cells[k]:
                continue
            sig = state.system.relations[k]
            thetas[(bi, k)] = {
                tuple(label_maps[d][t] for d, t in zip(sig.domains, key)): cell.theta
                for key, cell in sub.cells[k].items()
            }
    return blocks, clusters, gammas, thetas


def rebuild_with_store(state, new_store):
    """Same latent configuration over a replacement store; the generator
    object carries over so the chain's stream continues uninterrupted."""
    blocks, clusters, gammas, thetas = extract_latents(state)
    return HirmState.from_configuration(
        new_store, blocks, clusters,
        gamma0=state.rel_partition.concentration,
        entity_gamma=state.entity_gamma, block_domain_gamma=gammas,
        families=state.families, thetas=thetas, mode=state.mode,
        hyper_kernel=state.hyper_kernel, seed=state.seed, rng=state.rng,
        scan_count=state.scan_count,
    )


def _entity_names(spec, dom):
    if isinstance(spec, int):
        return [f"{dom}.{i}" for i in range(spec)]
    return list(spec)


def sample_dataset(config, rng=None):
    """Forward-sample a dataset from a generator config.

    Config keys: domains (name -> count or name list), relations (name,
    likelihood, domains), gamma0, gamma, blocks ("prior" or explicit name
    blocks), clusters ("prior" or {block index: {domain: [[entity names]]}}),
    theta_beta ([a, b] for Bernoulli-like cells), theta_dirichlet (symmetric
    weight for categorical cells), coverage (observation probability per
    grid cell), seed.

    Returns (schema text, observation rows, ground-truth dict).
    """
    rng = rng if rng is not None else make_rng(config.get("seed"))
    domains_cfg = config["domains"]
    lines = []
    for rel in config["relations"]:
        doms = " ".join(rel["domains"])
        lines.append(f"{rel['likelihood']} {rel['name']} {doms}")
    schema_text = "\n".join(lines) + "\n"
    system = parse_schema(schema_text)
    for dom in domains_cfg:
        system.domain_index(dom)  # every configured domain must be used

    names = {system.domain_index(d): _entity_names(spec, d)
             for d, spec in domains_cfg.items()}
    counts = {d: len(n) for d, n in names.items()}
    gamma0 = config.get("gamma0", 1.0)
    gamma = config.get("gamma", 1.0)

    blocks_cfg = config.get("blocks", "prior")
    fixed_blocks = None
    if blocks_cfg != "prior":
        fixed_blocks = [
            [system.relation_index(name) for name in block] for block in blocks_cfg
        ]
        flat = sorted(k for b in fixed_blocks for k in b)
        if flat != list(range(system.n_relations)):
            raise ValueError("blocks must partition the declared relations")
    blocks, clusters = sample_prior_latents(
        system, counts, gamma0=gamma0, gamma=gamma, rng=rng, blocks=fixed_blocks
    )

    clusters_cfg = config.get("clusters", "prior")
    if clusters_cfg != "prior":
        for bi_key, per_domain in clusters_cfg.items():
            bi = int(bi_key)
            for dom, given in per_domain.items():
                d = system.domain_index(dom)
                index = {name: i for i, name in enumerate(names[d])}
                clusters[(bi, d)] = [[index[n] for n in cl] for cl in given]

    a, b = config.get("theta_beta", (1.0, 1.0))
    delta = config.get("theta_dirichlet", 1.0)
    coverage = config.get("coverage", 1.0)

    assign = {}
    for (bi, d), cls in clusters.items():
        table = {}
        for ci, members in enumerate(cls):
            for e in members:
                table[e] = ci
        assign[(bi, d)] = table

    thetas = {}
    rows = []
    for bi, block in enumerate(blocks):
        for k in sorted(block):
            sig = system.relations[k]
            n_clusters = [len(clusters[(bi, d)]) for d in sig.domains]
            theta = {}
            for cell in product(*(range(c) for c in n_clusters)):
                if sig.kind == "categorical":
                    theta[cell] = rng.dirichlet([delta] * sig.n_categories)
                else:
                    theta[cell] = rng.beta(a, b)
            thetas[k] = theta
            for tup in product(*(range(counts[d]) for d in sig.domains)):
                if coverage < 1.0 and rng.random() >= coverage:
                    continue
                cell = tuple(
                    assign[(bi, d)][e] for d, e in zip(sig.domains, tup)
                )
                if sig.kind == "categorical":
                    v = int(rng.choice(sig.n_categories, p=theta[cell]))
                else:
                    v = 1 if rng.random() < theta[cell] else 0
                ents = tuple(names[d][e] for d, e in zip(sig.domains, tup))
                rows.append((sig.name, v, ents))

    truth = {
        "blocks": [[system.relations[k].name for k in block] for block in blocks],
        "clusters": {
            str(bi): {
                system.domains[d]: [[names[d][e] for e in cl] for cl in cls]
                for (bbi, d), cls in sorted(clusters.items()) if bbi == bi
            }
            for bi in range(len(blocks))
        },
        "theta": {
            system.relations[k].name: {
                ",".join(map(str, cell)): (
                    list(map(float, th)) if hasattr(th, "__len__") else float(th)
                )
                for cell, th in theta.items()
            }
            for k, theta in thetas.items()
        },
    }
    return schema_text, rows, truth


def rows_to_csv(rows):
    """Observation rows as CSV text (`relation,value,entity,...`)."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for name, v, ents in rows:
        writer.writerow([name, v, *ents])
    return buf.getvalue()
