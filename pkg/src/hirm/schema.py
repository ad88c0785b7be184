"""Relational system declarations and observation loading.

A system declares named domains and typed relations; observations are sparse
(relation, entity tuple) -> value cells. Entities are interned per domain to
dense integer indexes so the samplers only ever touch arrays of ints.
"""

import csv
import io

LIKELIHOOD_KEYWORDS = ("bernoulli", "categorical", "bernoulli_nc")


class SchemaError(ValueError):
    """Malformed schema text (reported with a line number)."""


class ObservationError(ValueError):
    """Malformed or inconsistent observation rows (reported with a line number)."""


class RelationSignature:
    """One typed relation: name, ordered domain indexes, and likelihood kind.

    kind is one of "bernoulli", "categorical", "bernoulli_nc"; categorical
    relations carry the (fixed, closed-world) number of values.
    """

    __slots__ = ("name", "domains", "kind", "n_categories")

    def __init__(self, name, domains, kind, n_categories=None):
        if len(domains) < 1:
            raise SchemaError(f"relation {name!r} must have arity >= 1")
        if kind not in LIKELIHOOD_KEYWORDS:
            raise SchemaError(f"unknown likelihood kind {kind!r}")
        if kind == "categorical":
            if n_categories is None or n_categories < 2:
                raise SchemaError(
                    f"relation {name!r}: categorical needs at least 2 values"
                )
        else:
            n_categories = None
        self.name = name
        self.domains = tuple(domains)
        self.kind = kind
        self.n_categories = n_categories

    @property
    def arity(self):
        return len(self.domains)

    @property
    def codomain_size(self):
        return self.n_categories if self.kind == "categorical" else 2

    def __repr__(self):
        return f"RelationSignature({self.name!r}, domains={self.domains}, kind={self.kind!r})"


class RelationalSystem:
    """Ordered domains plus relation signatures over them."""

    def __init__(self, domains, relations):
        if not domains:
            raise SchemaError("a system needs at least one domain")
        if not relations:
            raise SchemaError("a system needs at least one relation")
        if len(set(domains)) != len(domains):
            raise SchemaError("domain names must be unique")
        names = [r.name for r in relations]
        if len(set(names)) != len(names):
            raise SchemaError("relation names must be unique")
        self.domains = list(domains)
        self.relations = list(relations)
        self._domain_index = {d: i for i, d in enumerate(domains)}
        self._relation_index = {r.name: i for i, r in enumerate(relations)}
        for rel in relations:
            for d in rel.domains:
                if not 0 <= d < len(domains):
                    raise SchemaError(
                        f"relation {rel.name!r} references undeclared domain index {d}"
                    )

    @property
    def n_domains(self):
        return len(self.domains)

    @property
    def n_relations(self):
        return len(self.relations)

    def domain_index(self, name):
        try:
            return self._domain_index[name]
        except KeyError:
            raise SchemaError(f"unknown domain {name!r}") from None

    def relation_index(self, name):
        try:
            return self._relation_index[name]
        except KeyError:
            raise SchemaError(f"unknown relation {name!r}") from None

    def domains_of(self, k):
        """Sorted distinct domain indexes appearing in relation k's signature."""
        return sorted(set(self.relations[k].domains))


def _parse_likelihood(token, lineno):
    if token == "bernoulli":
        return "bernoulli", None
    if token == "bernoulli_nc":
        return "bernoulli_nc", None
    if token.startswith("categorical:"):
        raw = token.split(":", 1)[1]
        try:
            k = int(raw)
        except ValueError:
            raise SchemaError(f"line {lineno}: bad categorical size {raw!r}") from None
        if k < 2:
            raise SchemaError(f"line {lineno}: categorical needs K >= 2, got {k}")
        return "categorical", k
    raise SchemaError(f"line {lineno}: unknown likelihood keyword {token!r}")


def parse_schema(text):
    """Parse schema text into a RelationalSystem.

    One relation per line: `<likelihood> <name> <domain>...` where likelihood
    is `bernoulli`, `categorical:<K>`, or `bernoulli_nc`. `#` starts a comment.
    Domains are registered in first-mention order, relations in file order.
    """
    domains = []
    domain_index = {}
    relations = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 3:
            raise SchemaError(
                f"line {lineno}: expected `<likelihood> <name> <domain>...`"
            )
        kind, k = _parse_likelihood(tokens[0], lineno)
        name = tokens[1]
        if name in seen:
            raise SchemaError(f"line {lineno}: duplicate relation name {name!r}")
        seen.add(name)
        idxs = []
        for dom in tokens[2:]:
            if dom not in domain_index:
                domain_index[dom] = len(domains)
                domains.append(dom)
            idxs.append(domain_index[dom])
        relations.append(RelationSignature(name, idxs, kind, k))
    return RelationalSystem(domains, relations)


def render_schema(system):
    """Schema text that parses back to an identical system."""
    lines = []
    for rel in system.relations:
        kind = rel.kind if rel.kind != "categorical" else f"categorical:{rel.n_categories}"
        doms = " ".join(system.domains[d] for d in rel.domains)
        lines.append(f"{kind} {rel.name} {doms}")
    return "\n".join(lines) + "\n"


class ObservationStore:
    """Indexed, immutable-after-load set of observed relation cells.

    Forward map: per relation, entity-index tuple -> value. Reverse index: per
    (domain, entity), the (relation, tuple, argument position) triples touching
    that entity, one per occurrence so repeated-domain signatures are handled.
    Missing cells are simply absent; there is no NA sentinel.
    """

    def __init__(self, system):
        self.system = system
        self.cells = [dict() for _ in system.relations]
        self.entity_names = [[] for _ in system.domains]
        self.entity_ids = [dict() for _ in system.domains]
        self.incident = [dict() for _ in system.domains]

    def n_entities(self, d):
        return len(self.entity_names[d])

    def entity_name(self, d, e):
        return self.entity_names[d][e]

    def intern(self, d, name):
        """Index of entity `name` in domain d, creating it if unseen."""
        ids = self.entity_ids[d]
        e = ids.get(name)
        if e is None:
            if name.startswith("~"):
                # reserved for fresh-entity markers in query files
                raise ObservationError(
                    f"entity names may not start with '~': {name!r}"
                )
            e = len(self.entity_names[d])
            ids[name] = e
            self.entity_names[d].append(name)
            self.incident[d][e] = []
        return e

    def lookup(self, d, name):
        return self.entity_ids[d].get(name)

    def add_row(self, rel_name, value, entities, lineno=0):
        """Insert one observed cell given raw strings; raises on any violation."""
        system = self.system
        try:
            k = system.relation_index(rel_name)
        except SchemaError:
            raise ObservationError(
                f"line {lineno}: unknown relation {rel_name!r}"
            ) from None
        sig = system.relations[k]
        if len(entities) != sig.arity:
            raise ObservationError(
                f"line {lineno}: relation {rel_name!r} expects {sig.arity} entities, "
                f"got {len(entities)}"
            )
        try:
            v = int(value)
        except (TypeError, ValueError):
            raise ObservationError(
                f"line {lineno}: value {value!r} is not an integer"
            ) from None
        if not 0 <= v < sig.codomain_size:
            raise ObservationError(
                f"line {lineno}: value {v} outside codomain of {rel_name!r} "
                f"(0..{sig.codomain_size - 1})"
            )
        tup = tuple(self.intern(d, name) for d, name in zip(sig.domains, entities))
        if tup in self.cells[k]:
            raise ObservationError(
                f"line {lineno}: duplicate cell {rel_name!r}{entities!r}"
            )
        self.cells[k][tup] = v
        for pos, (d, e) in enumerate(zip(sig.domains, tup)):
            self.incident[d][e].append((k, tup, pos))

    def entity_occurrences(self, d, e):
        """(relation, tuple, position) triples touching entity e of domain d."""
        return self.incident[d][e]

    def entity_cells(self, d, e, member_relations=None):
        """Distinct (relation, tuple) pairs touching entity e, in load order.

        Restricted to `member_relations` when given; a tuple where the entity
        repeats across positions appears once.
        """
        seen = set()
        out = []
        for k, tup, _pos in self.incident[d][e]:
            if member_relations is not None and k not in member_relations:
                continue
            key = (k, tup)
            if key not in seen:
                seen.add(key)
                out.append(key)
        return out

    def observed_entities(self, d, relations):
        """Entity ids of domain d appearing in any observed tuple of `relations`,
        in first-appearance order."""
        seen = set()
        out = []
        for k in relations:
            sig = self.system.relations[k]
            for pos, dom in enumerate(sig.domains):
                if dom != d:
                    continue
                for tup in self.cells[k]:
                    e = tup[pos]
                    if e not in seen:
                        seen.add(e)
                        out.append(e)
        return out

    def rows(self):
        """Raw rows (relation name, value, entity name tuple) in load order."""
        out = []
        for k, cells in enumerate(self.cells):
            sig = self.system.relations[k]
            for tup, v in cells.items():
                names = tuple(
                    self.entity_names[d][e] for d, e in zip(sig.domains, tup)
                )
                out.append((sig.name, v, names))
        return out

    def extended(self, extra_rows):
        """New store containing this store's rows plus `extra_rows`."""
        dup = ObservationStore(self.system)
        for name, v, entities in self.rows():
            dup.add_row(name, v, entities)
        for name, v, entities in extra_rows:
            dup.add_row(name, v, entities)
        return dup

    def check_reverse_index(self):
        """Rebuild the reverse index from the forward map and compare exactly."""
        rebuilt = [dict() for _ in self.system.domains]
        for d in range(self.system.n_domains):
            for e in self.incident[d]:
                rebuilt[d][e] = []
        for k, cells in enumerate(self.cells):
            sig = self.system.relations[k]
            for tup in cells:
                for pos, (d, e) in enumerate(zip(sig.domains, tup)):
                    rebuilt[d][e].append((k, tup, pos))
        for d in range(self.system.n_domains):
            for e, triples in self.incident[d].items():
                if sorted(triples) != sorted(rebuilt[d].get(e, [])):
                    return False
            if set(rebuilt[d]) != set(self.incident[d]):
                return False
        return True


def load_observations(system, text, canonical=False):
    """Load observation CSV rows `relation,value,entity_1,...,entity_t`.

    With canonical=True a second pass re-interns entities in sorted string
    order, making the store independent of input row order byte for byte.
    """
    parsed = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < 3:
            raise ObservationError(
                f"line {lineno}: expected `relation,value,entity,...`"
            )
        parsed.append((lineno, row[0].strip(), row[1].strip(),
                       tuple(cell.strip() for cell in row[2:])))

    store = ObservationStore(system)
    if canonical:
        names_by_domain = [set() for _ in system.domains]
        for lineno, rel_name, _value, entities in parsed:
            try:
                k = system.relation_index(rel_name)
            except SchemaError:
                raise ObservationError(
                    f"line {lineno}: unknown relation {rel_name!r}"
                ) from None
            sig = system.relations[k]
            if len(entities) != sig.arity:
                raise ObservationError(
                    f"line {lineno}: relation {rel_name!r} expects {sig.arity} "
                    f"entities, got {len(entities)}"
                )
            for d, name in zip(sig.domains, entities):
                names_by_domain[d].add(name)
        for d, names in enumerate(names_by_domain):
            for name in sorted(names):
                store.intern(d, name)

    for lineno, rel_name, value, entities in parsed:
        store.add_row(rel_name, value, entities, lineno=lineno)
    return store
