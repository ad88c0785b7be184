import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hirm.partition import NEW_TABLE, CrpPartition, crp_log_prob_counts
from hirm.util import make_rng, normalize_log_weights


def build(blocks, gamma=1.0):
    part = CrpPartition(gamma)
    for block in blocks:
        table = part.seat(block[0], NEW_TABLE)
        for item in block[1:]:
            part.seat(item, table)
    return part


class TestSeatUnseat:
    def test_seat_fresh_on_empty(self):
        part = CrpPartition(1.0)
        t = part.seat("a")
        assert part.table_counts == {t: 1}

    def test_seat_existing(self):
        part = build([["a", "b"]])
        part.seat("c", part.assignment["a"])
        assert sorted(part.table_counts.values()) == [3]

    def test_seat_second_fresh(self):
        part = build([["a"]])
        part.seat("b", NEW_TABLE)
        assert sorted(part.table_counts.values()) == [1, 1]

    def test_unseat_decrements(self):
        part = build([["a", "b"]])
        part.unseat("b")
        assert part.table_counts == {part.assignment["a"]: 1}

    def test_unseat_deletes_empty_table(self):
        part = build([["a"]])
        part.unseat("a")
        assert part.n_items == 0 and part.n_tables == 0

    def test_seat_unseat_roundtrip_identity(self):
        part = build([["a", "b"], ["c"]])
        before = (dict(part.assignment), {t: set(m) for t, m in part.tables.items()})
        t = part.seat("d", part.assignment["c"])
        part.unseat("d")
        after = (dict(part.assignment), {t: set(m) for t, m in part.tables.items()})
        assert before == after

    def test_double_seat_rejected(self):
        part = build([["a"]])
        with pytest.raises(ValueError, match="already assigned"):
            part.seat("a")

    def test_unseat_unknown_rejected(self):
        part = build([["a"]])
        with pytest.raises(ValueError, match="not assigned"):
            part.unseat("zzz")


class TestPredictiveWeights:
    def probs(self, part):
        weights = part.predictive_log_weights()
        keys = sorted(weights, key=str)
        probs = normalize_log_weights([weights[k] for k in keys])
        return dict(zip(keys, probs))

    def test_empty_partition_fresh_certain(self):
        part = CrpPartition(1.0)
        assert self.probs(part)[NEW_TABLE] == pytest.approx(1.0)

    def test_counts_2_1_gamma_1(self):
        part = build([[0, 1], [2]], gamma=1.0)
        probs = self.probs(part)
        t_big = part.assignment[0]
        t_small = part.assignment[2]
        assert probs[t_big] == pytest.approx(0.5)
        assert probs[t_small] == pytest.approx(0.25)
        assert probs[NEW_TABLE] == pytest.approx(0.25)

    def test_counts_3_gamma_2(self):
        part = build([[0, 1, 2]], gamma=2.0)
        probs = self.probs(part)
        assert probs[part.assignment[0]] == pytest.approx(0.6)
        assert probs[NEW_TABLE] == pytest.approx(0.4)


class TestLogProb:
    def test_singleton_scores_zero(self):
        assert build([["a"]]).log_prob() == pytest.approx(0.0)

    def test_two_one_gamma_1(self):
        assert build([["a", "b"], ["c"]], 1.0).log_prob() == pytest.approx(
            math.log(1 / 6)
        )

    def test_all_singletons_gamma_2(self):
        assert build([["a"], ["b"], ["c"]], 2.0).log_prob() == pytest.approx(
            math.log(1 / 3)
        )

    def test_empty_scores_zero(self):
        assert CrpPartition(1.0).log_prob() == 0.0

    def test_counts_helper_matches(self):
        part = build([[0, 1, 2], [3], [4, 5]], gamma=0.7)
        counts = list(part.table_counts.values())
        assert crp_log_prob_counts(counts, 0.7) == pytest.approx(part.log_prob())

    @given(
        st.lists(st.integers(0, 3), min_size=1, max_size=8),
        st.floats(0.1, 5.0),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_sequential_consistency(self, labels, gamma, pyrandom):
        """Sum of seating conditionals equals log_prob for any insertion order."""
        items = list(range(len(labels)))
        pyrandom.shuffle(items)
        part = CrpPartition(gamma)
        total = 0.0
        label_to_table = {}
        for item in items:
            weights = part.predictive_log_weights()
            probs = dict(
                zip(
                    sorted(weights, key=str),
                    normalize_log_weights(
                        [weights[k] for k in sorted(weights, key=str)]
                    ),
                )
            )
            label = labels[item]
            table = label_to_table.get(label)
            if table is None:
                total += math.log(probs[NEW_TABLE])
                label_to_table[label] = part.seat(item, NEW_TABLE)
            else:
                total += math.log(probs[table])
                part.seat(item, table)
        assert total == pytest.approx(part.log_prob(), abs=1e-12)

    def test_exchangeability_item_relabeling(self):
        gamma = 1.7
        lp1 = build([[0, 1], [2, 3, 4]], gamma).log_prob()
        lp2 = build([[4, 3], [0, 2, 1]], gamma).log_prob()
        lp3 = build([[2, 3, 4], [0, 1]], gamma).log_prob()
        assert lp1 == pytest.approx(lp2) == pytest.approx(lp3)


class TestSample:
    def test_one_item_one_table(self):
        rng = make_rng(0)
        for _ in range(50):
            assert CrpPartition.sample(1, 1.0, rng).n_tables == 1

    def test_two_items_cocluster_half(self):
        rng = make_rng(1)
        hits = sum(
            CrpPartition.sample(2, 1.0, rng).n_tables == 1 for _ in range(100_000)
        )
        assert hits / 100_000 == pytest.approx(0.5, abs=0.01)

    def test_table_count_matches_bernoulli_sum_oracle(self):
        # the number of tables is a sum of independent Bernoulli(g/(g+i))
        # indicators, giving an independent check of the seating mechanics
        gamma, n, draws = 1.5, 40, 20_000
        expected = sum(gamma / (gamma + i) for i in range(n))
        rng = make_rng(2)
        mean = np.mean(
            [CrpPartition.sample(n, gamma, rng).n_tables for _ in range(draws)]
        )
        se = math.sqrt(
            sum(
                (gamma / (gamma + i)) * (1 - gamma / (gamma + i))
                for i in range(n)
            )
            / draws
        )
        assert abs(mean - expected) < 4 * se

    def test_tiny_gamma_degenerates_to_one_table(self):
        rng = make_rng(3)
        for _ in range(2000):
            assert CrpPartition.sample(12, 1e-9, rng).n_tables == 1

    def test_deterministic_given_seed(self):
        a = CrpPartition.sample(30, 1.0, make_rng(7)).canonical_blocks()
        b = CrpPartition.sample(30, 1.0, make_rng(7)).canonical_blocks()
        assert a == b


class TestCanonicalize:
    def test_relabels_by_lowest_member(self):
        part = CrpPartition(1.0)
        t1 = part.seat(5, NEW_TABLE)
        part.seat(2, t1)
        part.seat(0, NEW_TABLE)
        part.canonicalize()
        assert part.assignment[0] == 1
        assert part.assignment[2] == part.assignment[5] == 2
        assert part.canonical_blocks() == ((0,), (2, 5))

    def test_copy_is_independent(self):
        part = build([["a", "b"]])
        dup = part.copy()
        dup.unseat("b")
        assert part.n_items == 2 and dup.n_items == 1
