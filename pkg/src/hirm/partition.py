"""Chinese restaurant process partition state with exact prior probabilities.

The same structure is used to partition relations into blocks and to partition
domain entities within each block. All probability arithmetic is in log space.
"""

import math

from scipy.special import gammaln

from .util import sample_log_weights

# Sentinel table id accepted by seat() and returned as a key by
# predictive_log_weights() to denote "open a fresh table".
NEW_TABLE = -1


class CrpPartition:
    """Exchangeable partition of integer item ids under a CRP prior.

    Tracks item -> table assignments and table membership sets. Empty tables
    are deleted immediately; table ids are arbitrary positive integers, with
    canonical 1..K relabeling available for serialization and comparison.
    """

    __slots__ = ("concentration", "assignment", "tables")

    def __init__(self, concentration):
        if concentration <= 0:
            raise ValueError("concentration must be positive")
        self.concentration = concentration
        self.assignment = {}
        self.tables = {}

    @property
    def n_items(self):
        return len(self.assignment)

    @property
    def n_tables(self):
        return len(self.tables)

    @property
    def table_counts(self):
        return {t: len(members) for t, members in self.tables.items()}

    def seat(self, item, table=NEW_TABLE):
        """Seat an unassigned item at an existing table or a fresh one.

        Returns the table id actually used (the new id when table=NEW_TABLE).
        """
        if item in self.assignment:
            raise ValueError(f"item {item!r} is already assigned")
        if table == NEW_TABLE:
            table = max(self.tables, default=0) + 1
            self.tables[table] = set()
        elif table not in self.tables:
            raise ValueError(f"table {table!r} does not exist")
        self.tables[table].add(item)
        self.assignment[item] = table
        return table

    def unseat(self, item):
        """Remove an assigned item; deletes its table if emptied.

        Returns the table id the item left.
        """
        try:
            table = self.assignment.pop(item)
        except KeyError:
            raise ValueError(f"item {item!r} is not assigned") from None
        members = self.tables[table]
        members.remove(item)
        if not members:
            del self.tables[table]
        return table

    def predictive_log_weights(self):
        """Unnormalized log seating weights: log(n_t) per table, log(gamma) fresh.

        The fresh table appears under the NEW_TABLE key; the caller normalizes.
        """
        weights = {t: math.log(len(members)) for t, members in self.tables.items()}
        weights[NEW_TABLE] = math.log(self.concentration)
        return weights

    def sample_seat(self, item, rng):
        """Seat an item by one draw from the CRP predictive; returns table id."""
        candidates = sorted(self.tables)
        log_w = [math.log(len(self.tables[t])) for t in candidates]
        candidates.append(NEW_TABLE)
        log_w.append(math.log(self.concentration))
        choice = candidates[sample_log_weights(rng, log_w)]
        return self.seat(item, choice)

    def log_prob(self, concentration=None):
        """Exact log CRP prior probability of the current partition.

        Equals the product of sequential seating conditionals over any
        insertion order; the empty partition scores 0.
        """
        gamma = self.concentration if concentration is None else concentration
        n = len(self.assignment)
        if n == 0:
            return 0.0
        lp = len(self.tables) * math.log(gamma)
        for members in self.tables.values():
            lp += float(gammaln(len(members)))
        lp -= float(gammaln(gamma + n) - gammaln(gamma))
        return lp

    @classmethod
    def sample(cls, n_items, concentration, rng):
        """Draw a partition of items 0..n_items-1 by sequential CRP seating."""
        part = cls(concentration)
        for item in range(n_items):
            part.sample_seat(item, rng)
        return part

    def canonical_blocks(self):
        """Blocks as sorted tuples, ordered by smallest member; label-free form."""
        blocks = [tuple(sorted(members)) for members in self.tables.values()]
        blocks.sort(key=lambda b: b[0])
        return tuple(blocks)

    def canonicalize(self):
        """Relabel tables 1..K in order of each table's smallest item id."""
        blocks = self.canonical_blocks()
        self.tables = {i + 1: set(block) for i, block in enumerate(blocks)}
        self.assignment = {
            item: label for label, members in self.tables.items() for item in members
        }

    def copy(self):
        dup = CrpPartition(self.concentration)
        dup.assignment = dict(self.assignment)
        dup.tables = {t: set(members) for t, members in self.tables.items()}
        return dup

    def __repr__(self):
        blocks = "|".join(
            ",".join(map(str, block)) for block in self.canonical_blocks()
        )
        return f"CrpPartition(gamma={self.concentration:g}, blocks=[{blocks}])"


def crp_log_prob_counts(counts, gamma):
    """Log CRP probability of a partition given only its block sizes."""
    counts = list(counts)
    n = sum(counts)
    if n == 0:
        return 0.0
    lp = len(counts) * math.log(gamma)
    for c in counts:
        lp += float(gammaln(c))
    lp -= float(gammaln(gamma + n) - gammaln(gamma))
    return lp
