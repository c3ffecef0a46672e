import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from colliderlab import scm as S
from colliderlab import stats as st
from colliderlab.rng import RandomStream

from conftest import DEFAULT_ANGLES, oracle_table, closed_form_pair


def within_sigma(k: int, n: int, p: float, n_sigma: float = 3.0) -> bool:
    return abs(k / n - p) <= n_sigma * math.sqrt(p * (1 - p) / n) + 1e-12


@pytest.fixture(scope="module")
def toy():
    return S.build_toy_bell()


class TestModelValidation:
    def test_cycle_rejected(self):
        x = S.Variable("X", (0, 1), (None,), (1.0,), fn=lambda v, u: v["Y"], parents=("Y",))
        y = S.Variable("Y", (0, 1), (None,), (1.0,), fn=lambda v, u: v["X"], parents=("X",))
        with pytest.raises(S.SCMError, match="cycle"):
            S.SCM([x, y])

    def test_function_must_be_total(self):
        bad = S.Variable("Z", (0, 1), (None,), (1.0,), fn=lambda v, u: v["X"] + 1, parents=("X",))
        with pytest.raises(S.SCMError, match="outside its domain"):
            S.SCM([S.choice("X", (0, 1)), bad])

    def test_unknown_parent(self):
        z = S.Variable("Z", (0, 1), (None,), (1.0,), fn=lambda v, u: 0, parents=("Q",))
        with pytest.raises(S.SCMError):
            S.SCM([z])

    def test_zero_probability_lock(self):
        with pytest.raises(S.InfeasibleConstraintError):
            S.build_penrose_paths("initial-control").lock("Origin", "F")

    def test_lock_value_in_domain(self):
        with pytest.raises(S.SCMError):
            S.build_ivy(0.5, 0.5).lock("Admit", 2)

    def test_ivy_parameters(self):
        with pytest.raises(S.SCMError):
            S.build_ivy(0.0, 0.5)

    def test_topological_order(self, toy):
        assert toy.order == ("a", "b", "A", "B", "M")


class TestSample:
    def test_damascus_meeting_rate(self):
        data = S.sample(S.build_death_in_damascus(), 10**6, RandomStream(1))
        assert within_sigma(int((data.column("Meeting") == 1).sum()), len(data), 0.5)

    def test_ivy_admission_rate(self):
        # enumeration: 1 - P(neither) = 1 - 0.5 * 0.5
        expected = 1 - 0.5 * 0.5
        model = S.build_ivy(0.5, 0.5)
        assert model.probability({"Admit": 1}) == pytest.approx(expected)
        data = S.sample(model, 10**6, RandomStream(2))
        assert within_sigma(int((data.column("Admit") == 1).sum()), len(data), expected)

    def test_toy_cells_uniform(self, toy):
        table = st.tabulate(S.sample(toy, 10**6, RandomStream(3)))
        n = table.total
        assert np.all([within_sigma(int(c), n, 1 / 16) for c in table.counts.ravel()])

    def test_locked_model_refuses_plain_sampling(self):
        with pytest.raises(S.SCMError):
            S.sample(S.build_ivy(0.5, 0.5).lock("Admit", 1), 10, RandomStream(0))

    def test_partition_invariance(self, toy):
        x = S.sample(toy, 30000, RandomStream(4))
        y = S.sample(toy, 30000, RandomStream(4), partitions=6, workers=3)
        np.testing.assert_array_equal(x.cells, y.cells)

    def test_rows_are_consistent(self, toy):
        data = S.sample(toy, 50, RandomStream(5))
        for i in range(len(data)):
            row = data.row(i)
            assert toy.evaluate(row.noise).values == row.values


class TestCondition:
    def test_ivy_forced_academic(self):
        data = S.sample(S.build_ivy(0.5, 0.5), 10**5, RandomStream(6))
        sub = S.condition(data, {"Admit": 1, "Athletic": 0})
        assert np.all(sub.column("Academic") == 1)
        assert "conditioned" in sub.provenance

    def test_damascus_survivors_anticorrelated(self):
        data = S.sample(S.build_death_in_damascus(), 10**5, RandomStream(7))
        sub = data.condition({"Meeting": 0})
        assert np.all(sub.column("YourChoice") != sub.column("DeathChoice"))

    def test_toy_bin_matches_quantum_table(self, toy):
        sub = S.sample(toy, 10**6, RandomStream(8)).condition({"M": 0})
        assert st.chi_square_match(st.tabulate(sub), oracle_table(0)).passed

    def test_callable_predicate(self):
        data = S.sample(S.build_ivy(0.5, 0.5), 1000, RandomStream(9))
        sub = data.condition(lambda d: d.column("Academic") + d.column("Athletic") == 2)
        assert np.all(sub.column("Admit") == 1)

    def test_empty_selection(self):
        data = S.sample(S.build_penrose_paths("initial-control"), 1000, RandomStream(10))
        with pytest.raises(S.EmptySelectionError):
            data.condition({"Origin": "F"})


class TestSampleConstrained:
    def test_fate_locks_meeting(self):
        data = S.sample_constrained(S.build_death_in_damascus().lock("Meeting", 1), 10**4, RandomStream(11))
        assert np.all(data.column("YourChoice") == data.column("DeathChoice"))

    def test_ivy_locked_joint(self):
        data = S.sample_constrained(S.build_ivy(0.5, 0.5).lock("Admit", 1), 3 * 10**5, RandomStream(12))
        counts = {
            (ac, at): int(((data.column("Academic") == ac) & (data.column("Athletic") == at)).sum())
            for ac, at in itertools.product((0, 1), repeat=2)
        }
        assert counts[(0, 0)] == 0
        for cell in [(0, 1), (1, 0), (1, 1)]:
            assert within_sigma(counts[cell], len(data), 1 / 3, 4)

    def test_toy_lock_equals_conditioning(self, toy):
        locked = S.sample_constrained(toy.lock("M", 0), 2 * 10**5, RandomStream(13))
        cond = S.sample(toy, 8 * 10**5, RandomStream(14)).condition({"M": 0})
        assert st.homogeneity_test(st.tabulate(locked), st.tabulate(cond)).passed

    def test_requires_lock(self, toy):
        with pytest.raises(S.SCMError):
            S.sample_constrained(toy, 10, RandomStream(0))

    @pytest.mark.parametrize(
        "build, lock",
        [
            (lambda: S.build_ivy(0.3, 0.6), ("Admit", 1)),
            (S.build_death_in_damascus, ("Meeting", 0)),
            (lambda: S.build_penrose_paths("equilibrium"), ("Terminal", "D")),
            (S.build_toy_bell, ("M", 2)),
        ],
    )
    def test_equivalence_across_suite(self, build, lock):
        model = build()
        rng = RandomStream(15)
        locked = S.sample_constrained(model.lock(*lock), 10**5, rng.substream(1))
        cond = S.sample(model, 4 * 10**5, rng.substream(2)).condition(dict([lock]))
        from scipy.stats import chi2_contingency

        a = np.unique(locked.cells, return_counts=True)
        b = np.unique(cond.cells, return_counts=True)
        cells = np.union1d(a[0], b[0])
        rows = np.zeros((2, len(cells)))
        rows[0, np.searchsorted(cells, a[0])] = a[1]
        rows[1, np.searchsorted(cells, b[0])] = b[1]
        if len(cells) > 1:
            assert chi2_contingency(rows, correction=False).pvalue >= 1e-3


class TestFixedNoiseCounterfactual:
    def test_survivor_would_have_met_death(self):
        model = S.build_death_in_damascus()
        survivor = next(r for r in model.rows() if r["Meeting"] == 0)
        cf = S.counterfactual_fixed_noise(model, survivor, ("YourChoice", 1 - survivor["YourChoice"]))
        assert cf["Meeting"] == 1
        assert cf["DeathChoice"] == survivor["DeathChoice"]

    def test_flipping_a_never_moves_b(self, toy):
        for row in toy.rows():
            for new in (0, 1):
                assert S.counterfactual_fixed_noise(toy, row, ("a", new))["B"] == row["B"]

    def test_flipping_a_moves_the_bin_somewhere(self, toy):
        # oracle: a bin can move iff the two a-contexts' cumulative laws differ
        q = toy.meta["bin_probabilities"]
        assert np.any(np.abs(q[0] - q[1]) > 1e-9)
        moved = sum(
            S.counterfactual_fixed_noise(toy, row, ("a", 1 - row["a"]))["M"] != row["M"] for row in toy.rows()
        )
        assert moved > 0

    @given(hst.integers(0, 127), hst.sampled_from(["a", "b", "A", "B"]))
    @settings(max_examples=60)
    def test_double_flip_is_identity(self, cell, var):
        toy = S.build_toy_bell()
        row = toy.row_from_cell(cell)
        once = S.counterfactual_fixed_noise(toy, row, (var, 1 - row[var]))
        twice = S.counterfactual_fixed_noise(toy, once, (var, row[var]))
        assert twice == row

    def test_only_choices_are_settable(self, toy):
        with pytest.raises(S.SCMError):
            S.counterfactual_fixed_noise(toy, toy.row_from_cell(0), ("M", 1))

    def test_inconsistent_row(self, toy):
        row = toy.row_from_cell(0)
        bad = S.Row({**row.values, "M": (row["M"] + 1) % 4}, row.noise)
        with pytest.raises(S.SCMError):
            S.counterfactual_fixed_noise(toy, bad, ("a", 1))


class TestConstrainedCounterfactual:
    def test_fate_moves_death(self):
        model = S.build_death_in_damascus().lock("Meeting", 1)
        row = next(r for r in model.rows() if r["Meeting"] == 1)
        cf = S.counterfactual_constrained(model, row, ("YourChoice", 1 - row["YourChoice"]), 2000, RandomStream(20))
        assert np.all(cf.column("DeathChoice") == 1 - row["DeathChoice"])

    def test_ivy_athlete_would_be_academic(self):
        model = S.build_ivy(0.5, 0.5).lock("Admit", 1)
        row = next(r for r in model.rows() if r["Athletic"] == 1 and r["Academic"] == 0)
        cf = S.counterfactual_constrained(model, row, ("Athletic", 0), 2000, RandomStream(21))
        assert np.all(cf.column("Academic") == 1)

    def test_toy_shift_to_new_settings(self, toy):
        locked = toy.lock("M", 0)
        row = next(r for r in locked.rows() if r["M"] == 0 and r["a"] == 0 and r["b"] == 1)
        cf = S.counterfactual_constrained(locked, row, ("a", 1), 10**5, RandomStream(22))
        assert np.all(cf.column("a") == 1) and np.all(cf.column("b") == 1)
        # Bayes oracle: P(A,B | a'=1, b=1, M=0) = P_0(A,B | a', b)
        target = np.zeros((2, 2, 2, 2))
        target[1, 1] = closed_form_pair(0, DEFAULT_ANGLES[1], DEFAULT_ANGLES[3])
        assert st.chi_square_match(st.tabulate(cf), target).passed

    def test_infeasible_under_intervention(self):
        model = S.build_ivy(0.5, 0.5).lock("Admit", 1)
        row = next(r for r in model.rows() if r["Athletic"] == 0 and r["Academic"] == 1)
        with pytest.raises(S.InfeasibleConstraintError):
            S.counterfactual_constrained(model, row, ("Academic", 0), 10, RandomStream(23), hold=["Athletic"])

    def test_row_must_satisfy_lock(self):
        model = S.build_death_in_damascus().lock("Meeting", 1)
        row = next(r for r in model.rows() if r["Meeting"] == 0)
        with pytest.raises(S.SCMError):
            S.counterfactual_constrained(model, row, ("YourChoice", 0), 10, RandomStream(24))

    def test_requires_locked_model(self, toy):
        with pytest.raises(S.SCMError):
            S.counterfactual_constrained(toy, toy.row_from_cell(0), ("a", 1), 10, RandomStream(25))


class TestBuilders:
    def test_ivy_negative_selection_correlation(self):
        p = q = 0.2
        # enumeration over the three admitted cells
        z = 1 - (1 - p) * (1 - q)
        e_ac, e_at, e_both = p / z, q / z, p * q / z
        oracle_corr = (e_both - e_ac * e_at) / math.sqrt(e_ac * (1 - e_ac) * e_at * (1 - e_at))
        assert oracle_corr < 0
        data = S.sample(S.build_ivy(p, q), 10**5, RandomStream(30)).condition({"Admit": 1})
        corr = np.corrcoef(data.column("Academic"), data.column("Athletic"))[0, 1]
        assert corr < 0
        assert corr == pytest.approx(oracle_corr, abs=0.03)

    def test_toy_bin_probabilities_sum_to_one(self, toy):
        oracle = np.zeros((2, 2, 2, 2))
        for m in range(4):
            oracle += 4 * oracle_table(m)
        np.testing.assert_allclose(oracle, 1.0, atol=1e-12)
        np.testing.assert_allclose(toy.meta["bin_probabilities"].sum(axis=-1), 1.0, atol=1e-12)

    def test_toy_structural_law(self, toy):
        for a, b, A, B in itertools.product((0, 1), repeat=4):
            given = {"a": a, "b": b, "A": A, "B": B}
            for m in range(4):
                assert toy.probability({"M": m}, given) == pytest.approx(4 * oracle_table(m)[a, b, A, B], abs=1e-12)

    def test_toy_bin_marginals(self, toy):
        for m in range(4):
            assert toy.probability({"M": m}) == pytest.approx(0.25, abs=1e-12)
            for a, b in itertools.product((0, 1), repeat=2):
                assert toy.probability({"M": m}, {"a": a, "b": b}) == pytest.approx(0.25, abs=1e-12)

    @pytest.mark.parametrize("m", range(4))
    def test_toy_bins_against_quantum(self, toy, m):
        data = S.sample(toy, 10**6, RandomStream(31 + m)).condition({"M": m})
        assert st.chi_square_match(st.tabulate(data), oracle_table(m)).passed

    def test_penrose_initial_control(self):
        model = S.build_penrose_paths("initial-control")
        assert model.probability({"Terminal": "D"}, {"Origin": "S"}) == 0.5
        assert model.probability({"Origin": "S"}, {"Terminal": "D"}) == 1.0

    def test_penrose_equilibrium(self):
        model = S.build_penrose_paths("equilibrium")
        assert model.probability({"Origin": "S"}, {"Terminal": "D"}) == pytest.approx(0.5)

    def test_penrose_routes_cover_four_paths(self):
        assert len(S.PENROSE_ROUTES) == 4
        assert sorted(S.PENROSE_ROUTES.values()) == ["C", "C", "D", "D"]


class TestColliderBias:
    @pytest.mark.parametrize(
        "build, x, y, collider, value",
        [
            (lambda: S.build_ivy(0.5, 0.5), "Academic", "Athletic", "Admit", 1),
            (lambda: S.build_ivy(0.2, 0.7), "Academic", "Athletic", "Admit", 1),
            (S.build_death_in_damascus, "YourChoice", "DeathChoice", "Meeting", 0),
            (lambda: S.build_penrose_paths("equilibrium"), "Origin", "Branch", "Terminal", "D"),
            (S.build_toy_bell, "A", "B", "M", 0),
        ],
    )
    def test_dependence_appears_only_after_conditioning(self, build, x, y, collider, value):
        data = S.sample(build(), 2 * 10**5, RandomStream(40))
        assert st.independence_test(data, x, y).passed
        assert not st.independence_test(data, x, y, given={collider: value}).passed
