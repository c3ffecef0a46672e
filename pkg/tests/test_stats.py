import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from colliderlab import bellcore as bc
from colliderlab import scm as S
from colliderlab import stats as st
from colliderlab.rng import RandomStream

from conftest import oracle_chsh, oracle_table

runs = hst.lists(hst.tuples(*[hst.integers(0, 1)] * 4), min_size=1, max_size=200)


def cols(rows):
    arr = np.array(rows).reshape(-1, 4)
    return {k: arr[:, i] for i, k in enumerate("abAB")}


class TestTabulate:
    def test_single_run(self):
        t = st.tabulate(cols([(0, 0, 0, 0)]))
        assert t.counts[0, 0, 0, 0] == 1 and t.total == 1

    def test_uniform_synthetic(self):
        rows = list(itertools.product((0, 1), repeat=4)) * 1000
        assert np.all(st.tabulate(cols(rows)).counts == 1000)

    def test_v_fixed_within_4_sigma(self):
        ens = bc.run_v(bc.Fixed(0), 2 * 10**5, rng=RandomStream(1))
        counts, n, p = st.tabulate(ens).counts, len(ens), oracle_table(0)
        assert np.all(np.abs(counts - n * p) < 4 * np.sqrt(n * p * (1 - p)))

    def test_schema_error(self):
        data = S.sample(S.build_ivy(0.5, 0.5), 10, RandomStream(0))
        with pytest.raises(st.SchemaError):
            st.tabulate(data)
        with pytest.raises(st.SchemaError):
            st.tabulate({"a": [0], "b": [0]})

    @given(runs, hst.randoms())
    @settings(max_examples=50)
    def test_permutation_invariant(self, rows, rnd):
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        np.testing.assert_array_equal(st.tabulate(cols(rows)).counts, st.tabulate(cols(shuffled)).counts)

    @given(runs, runs)
    @settings(max_examples=50)
    def test_merge_equals_concatenation(self, x, y):
        merged = st.tabulate(cols(x)) + st.tabulate(cols(y))
        np.testing.assert_array_equal(merged.counts, st.tabulate(cols(x + y)).counts)


class TestCorrelator:
    def test_perfect_correlation(self):
        t = np.zeros((2, 2, 2, 2))
        t[0, 0, 0, 0] = t[0, 0, 1, 1] = 5
        assert st.correlator(t, 0, 0) == 1.0

    def test_uniform_stratum(self):
        assert st.correlator(np.ones((2, 2, 2, 2)), 1, 0) == 0.0

    def test_fixed_optimal_magnitude(self):
        ens = bc.run_v(bc.Fixed(0), 4 * 10**5, rng=RandomStream(2))
        table = st.tabulate(ens)
        for a, b in itertools.product((0, 1), repeat=2):
            e, se = st.correlator(table, a, b), st.correlator_se(table, a, b)
            assert abs(abs(e) - math.sqrt(2) / 2) < 4 * se

    def test_empty_stratum(self):
        t = np.zeros((2, 2, 2, 2))
        t[0, 0, 0, 0] = 1
        with pytest.raises(st.InsufficientDataError):
            st.correlator(t, 1, 1)


class TestCHSH:
    def test_lhv_bound(self):
        assert st.lhv_chsh_bound() == pytest.approx(2.0)

    def test_unselected_scm_respects_bound(self):
        data = S.sample(S.build_toy_bell(), 2 * 10**5, RandomStream(3))
        est = st.chsh(st.tabulate(data))
        assert abs(est.value) <= 2 + 4 * est.se

    def test_w_postselect(self):
        ens = bc.run_w(bc.WMode.postselect(0), 10**6, rng=RandomStream(4))
        assert abs(st.chsh(st.tabulate(ens), 0).value - 2 * math.sqrt(2)) < 0.05

    def test_w_unselected(self):
        ens = bc.run_w(bc.WMode.unselected(), 10**6, rng=RandomStream(5))
        assert abs(st.chsh(st.tabulate(ens)).value) < 0.05

    @pytest.mark.parametrize("m", range(4))
    def test_exact_tables_match_closed_form(self, m):
        table = oracle_table(m)
        for signs in st.SIGN_PATTERNS:
            assert st.chsh(table, signs).value == pytest.approx(oracle_chsh(table, signs), abs=1e-12)
        assert st.chsh(bc.bell_conditional_table(m), m).value == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_invalid_sign_pattern(self):
        with pytest.raises(ValueError):
            st.chsh(np.ones((2, 2, 2, 2)), (1, 1, 1, 1))

    def test_standard_error_shrinks_as_root_n(self):
        scaled = []
        for n in (10**3, 10**4, 10**5, 10**6):
            ens = bc.run_v(bc.Fixed(0), n, rng=RandomStream(6))
            scaled.append(st.chsh(st.tabulate(ens), 0).se * math.sqrt(n))
        # sqrt(N) * SE -> 2 * sqrt(1 - 1/2) * 2 = 2*sqrt(2) for four strata of N/4
        assert np.ptp(scaled) / np.mean(scaled) < 0.1
        assert np.mean(scaled) == pytest.approx(2 * math.sqrt(2), rel=0.05)


class TestChiSquareMatch:
    def test_calibration(self):
        target = oracle_table(0)
        gen = np.random.default_rng(7)
        passes = 0
        for _ in range(100):
            counts = gen.multinomial(10**6, target.ravel()).reshape(2, 2, 2, 2)
            passes += st.chi_square_match(st.FreqTable16(counts), target).passed
        assert passes >= 95

    def test_detects_wrong_target(self):
        ens = bc.run_v(bc.Fixed(0), 10**5, rng=RandomStream(8))
        assert not st.chi_square_match(st.tabulate(ens), oracle_table(1)).passed

    def test_exact_match(self):
        target = np.full((2, 2, 2, 2), 1 / 16)
        res = st.chi_square_match(st.FreqTable16(np.full((2, 2, 2, 2), 100)), target)
        assert res.statistic == 0.0 and res.passed and res.df == 12

    def test_zero_expected_cell(self):
        target = np.zeros((2, 2, 2, 2))
        target[:, :, 0, 0] = 1 / 4
        counts = np.zeros((2, 2, 2, 2), dtype=int)
        counts[:, :, 0, 0] = 10
        counts[0, 0, 1, 1] = 1
        assert not st.chi_square_match(st.FreqTable16(counts), target).passed

    def test_target_must_sum_to_one(self):
        with pytest.raises(ValueError):
            st.chi_square_match(np.ones((2, 2, 2, 2)), np.ones((2, 2, 2, 2)))


class TestIndependence:
    def test_ivy_unconditioned(self):
        data = S.sample(S.build_ivy(0.5, 0.5), 10**5, RandomStream(9))
        assert st.independence_test(data, "Academic", "Athletic").passed

    def test_ivy_admitted(self):
        data = S.sample(S.build_ivy(0.5, 0.5), 10**5, RandomStream(10))
        assert not st.independence_test(data, "Academic", "Athletic", given={"Admit": 1}).passed

    def test_damascus_survivors(self):
        data = S.sample(S.build_death_in_damascus(), 10**4, RandomStream(11))
        assert not st.independence_test(data, "YourChoice", "DeathChoice", given={"Meeting": 0}).passed

    def test_constant_variable_passes(self):
        data = S.sample(S.build_penrose_paths("initial-control"), 1000, RandomStream(12))
        assert st.independence_test(data, "Origin", "Branch").passed


class TestReports:
    def test_two_proportion(self):
        assert st.two_proportion_test(900, 1000, 100, 1000).passed
        assert not st.two_proportion_test(500, 1000, 505, 1000).passed

    def test_bell_report_ranges(self):
        ens = bc.run_w(bc.WMode.constrained(3), 10**4, rng=RandomStream(13))
        report = st.bell_report(ens, 3)
        assert abs(report.chsh.value) <= 4
        assert all(abs(e.value) <= 1 for row in report.correlators for e in row)
        doc = report.to_dict()
        assert set(doc["correlators"]) == {"E00", "E01", "E10", "E11"}
        assert doc["no_signalling"]["passed"]

    def test_freq_table_invariants(self):
        with pytest.raises(ValueError):
            st.FreqTable16(-np.ones((2, 2, 2, 2), dtype=int))
        with pytest.raises(TypeError):
            st.FreqTable16(np.ones((2, 2, 2, 2)))
