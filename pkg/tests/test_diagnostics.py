"""Tests for coco.diagnostics: adoption rates, Welch tests and the descriptive bundle."""

import math

import numpy as np
import pytest
from scipy import stats

from coco.dataset import Dataset
from coco.diagnostics import (
    BATTERY_FACTORS,
    Tail,
    adoption_rate_farmer,
    adoption_rate_mediator,
    bonferroni_decide,
    descriptive_suite,
    differential_battery,
    farmer_adoption_rates,
    farmer_factor_table,
    gender_battery,
    mediator_adoption_rates,
    significance_tier,
    village_pair_overlap,
    welch_one_tailed,
)
from coco.errors import DegenerateStatisticsError, InsufficientSampleError
from coco.features import build_matrix
from coco.synthgen import simulate
from tests.conftest import busy_config, make_tables, toy_rows


class TestAdoptionRates:

    def test_farmer_rates(self, toy_dataset):
        rates = farmer_adoption_rates(toy_dataset)
        assert rates.to_dict() == {"F1": 0.5, "F2": 0.5, "F3": 0.5, "F4": 1.0, "F5": 0.0, "F6": 1.0, "F7": 0.0}

    def test_farmer_without_views(self):
        rows = toy_rows()
        rows["farmers"].append(["F8", "G4", "V3", "man", "2011-01-01"])
        dataset = Dataset.from_tables(make_tables(rows))
        with pytest.raises(InsufficientSampleError):
            adoption_rate_farmer(dataset, "F8")
        assert "F8" not in farmer_adoption_rates(dataset).index

    def test_mediator_rate_pools_per_video(self, toy_dataset):
        # VID1: 2 of 3 attendees; VID2: 1 of 3 attendees over two screenings
        assert adoption_rate_mediator(toy_dataset, "M1") == pytest.approx(0.5)

    def test_mediator_without_screenings(self):
        rows = toy_rows()
        rows["mediators"].append(["M3", "man"])
        with pytest.raises(InsufficientSampleError):
            adoption_rate_mediator(Dataset.from_tables(make_tables(rows)), "M3")

    def test_mediator_rates_per_state(self, toy_dataset):
        frame = mediator_adoption_rates(toy_dataset)
        assert [tuple(r) for r in frame.itertuples(index=False)] == [
            ("M1", "S1", "woman", 0.5), ("M2", "S1", "man", 0.5), ("M2", "S2", "man", 0.5)]


class TestWelch:

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(0.0, 1.0, size=int(rng.integers(2, 30)))
            b = rng.normal(0.5, 2.0, size=int(rng.integers(2, 30)))
            for tail in Tail:
                expected = stats.ttest_ind(a, b, equal_var=False, alternative=tail.value)
                result = welch_one_tailed(a, b, tail)
                assert result.t_stat == pytest.approx(expected.statistic, rel=1e-12)
                assert result.p_value == pytest.approx(expected.pvalue, rel=1e-9)
                assert min(a.size, b.size) - 1 <= result.degrees_of_freedom <= a.size + b.size - 2 + 1e-9

    def test_identical_samples(self):
        result = welch_one_tailed([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.t_stat == 0.0
        assert result.p_value == pytest.approx(0.5)

    def test_constant_equal_samples(self):
        with pytest.raises(DegenerateStatisticsError):
            welch_one_tailed([2.0, 2.0], [2.0, 2.0, 2.0])

    def test_constant_unequal_samples(self):
        less = welch_one_tailed([1.0, 1.0], [2.0, 2.0], Tail.LESS)
        assert less.t_stat == -math.inf and less.p_value == 0.0
        greater = welch_one_tailed([1.0, 1.0], [2.0, 2.0], Tail.GREATER)
        assert greater.p_value == 1.0

    def test_too_few_values(self):
        with pytest.raises(InsufficientSampleError):
            welch_one_tailed([1.0], [1.0, 2.0])

    def test_bonferroni(self):
        assert bonferroni_decide(0.0001)
        assert not bonferroni_decide(0.001 / 8)
        assert bonferroni_decide(0.01, m=1, alpha=0.05)
        with pytest.raises(ValueError):
            bonferroni_decide(0.01, m=0)

    @pytest.mark.parametrize("p, tier", [(0.0005, "0.001"), (0.01, "0.05"), (0.05, "none"), (0.2, "none")])
    def test_significance_tier(self, p, tier):
        assert significance_tier(p) == tier


class TestBatteries:

    def test_toy_differential_battery_skips_small_states(self, toy_dataset):
        report = differential_battery(toy_dataset, build_matrix(toy_dataset))
        assert report.states == {}
        assert sorted(report.skipped) == ["S1", "S2"]
        assert report.to_dict()["threshold"] == pytest.approx(0.001 / 8)

    def test_factor_table(self, small_dataset, small_matrix):
        table = farmer_factor_table(small_dataset, small_matrix)
        assert set(table.index) == set(small_dataset.farmer_screenings)
        assert table["adoption_rate"].notna().all()
        assert ((table["ma_mu"] > 0) & (table["ma_mu"] <= 1)).all()
        assert (table["active_age"] >= 0).all()

    def test_battery_structure(self, small_dataset, small_matrix):
        report = differential_battery(small_dataset, small_matrix)
        assert set(report.states) | set(report.skipped) == set(small_dataset.geography.states())
        for state, cells in report.states.items():
            assert list(cells) == [name for name, _ in BATTERY_FACTORS]
            sizes = report.quartile_sizes[state]
            assert max(sizes) - min(sizes) <= 1 and min(sizes) >= 2
            for cell in cells.values():
                assert cell.degenerate or 0.0 <= cell.p_value <= 1.0
                assert cell.significant == (not cell.degenerate and cell.p_value < 0.001 / 8)
        frame = report.mean_table()
        assert len(frame) == 4 * len(report.states)

    def test_gender_battery(self, toy_dataset):
        report = gender_battery(toy_dataset)
        farmer_s1 = report.cell("farmer", "S1")
        assert farmer_s1.computable
        assert farmer_s1.ar_men == pytest.approx(0.75)
        assert farmer_s1.ar_women == pytest.approx(1 / 3)
        expected = stats.ttest_ind([0.5, 0.5, 0.0], [0.5, 1.0], equal_var=False, alternative="less")
        assert farmer_s1.p_value == pytest.approx(expected.pvalue)
        assert farmer_s1.tier == significance_tier(expected.pvalue)

        assert report.cell("farmer", "S2").note == "missing gender group"
        assert not report.cell("mediator", "S1").computable
        assert set(report.to_dict()["roles"]) == {"farmer", "mediator"}

    def test_planted_gender_gap_is_found_everywhere(self):
        dataset = simulate(busy_config(beta_gender_gap=-1.5, n_screenings=400)).dataset
        report = gender_battery(dataset)
        states = dataset.geography.states()
        assert len(states) == 2
        for state in states:
            cell = report.cell("farmer", state)
            assert cell.ar_women < cell.ar_men
            assert cell.tier == "0.001", cell

    def test_symmetric_population_stays_quiet(self):
        quiet = 0
        for seed in range(5):
            config = busy_config(seed=seed, n_screenings=400, n_mediators=8,
                                 women_fraction=0.5, mediator_women_fraction=0.5)
            report = gender_battery(simulate(config).dataset)
            assert any(cell.computable for cell in report.cells)
            quiet += all(cell.tier != "0.001" for cell in report.cells)
        assert quiet >= 4


class TestDescriptive:

    def test_village_pair_overlap(self, toy_dataset):
        frame = village_pair_overlap(toy_dataset).set_index("state_id")
        assert frame.loc["S1", "overlap_percent"] == 100.0
        assert frame.loc["S2", "village_pairs"] == 0
        assert frame.loc["ALL", "overlap_percent"] == 100.0

    def test_suite(self, toy_dataset):
        bundle = descriptive_suite(toy_dataset)
        assert bundle.summary["zero_adopter_share"] == pytest.approx(2 / 7)
        assert bundle.summary["group_share_10_30"] == 0.0
        assert bundle.summary["village_pair_overlap_percent"] == 100.0

        monthly = bundle.tables["monthly_timeseries"]
        assert monthly["month"].tolist() == ["2012-01", "2012-02", "2012-03"]
        assert monthly["screenings"].tolist() == [2, 1, 2]
        assert monthly["adoptions"].tolist() == [3, 0, 2]

        scatter = bundle.tables["video_views_adoptions"]
        assert scatter["views"].tolist() == [5, 3, 2]
        assert scatter["adoptions"].tolist() == [3, 1, 1]
        fit = stats.linregress(np.log10([5, 3, 2]), np.log10([3, 1, 1]))
        assert bundle.summary["views_adoptions_slope"] == pytest.approx(fit.slope)

        cdf = bundle.tables["adoption_rate_cdf"]
        overall = cdf[cdf["state_id"] == "ALL"]
        assert overall["cdf"].iloc[-1] == pytest.approx(1.0)
        assert overall["adoption_rate"].tolist() == [0.0, 0.5, 1.0]

        videos = bundle.tables["state_videos"].set_index("state_id")
        assert videos.loc["S1", "screened_videos"] == 2
        assert videos.loc["S2", "adopted_videos"] == 1

    def test_zero_adopters(self, toy_dataset):
        zero = descriptive_suite(toy_dataset).tables["zero_adopters"].set_index("state_id")
        assert zero.loc["S1", "zero_ar_share"] == pytest.approx(0.2)
        assert zero.loc["S2", "mean_videos_attended_zero_ar"] == 1.0
