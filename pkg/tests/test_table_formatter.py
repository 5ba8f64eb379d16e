"""Tests for stages/table_formatter.py."""

from coco.diagnostics import Family, FactorTest
from stages.table_formatter import TableFormatter


def factor_test(t: float, significant: bool = False, degenerate: bool = False) -> FactorTest:
    return FactorTest("ma_mu", Family.Q1_BELOW_Q4, 0.1, 0.2, t, 10.0, 0.01, significant, degenerate)


class TestTableFormatter:

    def test_table_with_total(self):
        text = TableFormatter.format_as_table([{"a": 1.23456, "b": None}], ["a", "b"], title="T")
        assert "📊 T" in text
        assert "1.235" in text
        assert "N/A" in text
        assert "Total: 1 record(s)" in text

    def test_empty_table(self):
        assert TableFormatter.format_as_table([], ["a"]).startswith("❌")

    def test_battery_grid(self):
        states = {"S2": {"ma_mu": factor_test(-1.5)},
                  "S1": {"ma_mu": factor_test(-6.25, significant=True)},
                  "S3": {"ma_mu": factor_test(0.0, degenerate=True)}}
        text = TableFormatter.format_battery(states, title="Battery")
        header = next(line for line in text.splitlines() if "factor" in line)
        assert header.index("S1") < header.index("S2") < header.index("S3")
        assert "-6.25*" in text
        assert "-1.5" in text
        assert "degenerate" in text

    def test_empty_battery(self):
        assert TableFormatter.format_battery({}).startswith("❌")

    def test_error(self):
        assert TableFormatter.format_error("boom") == "❌ Error: boom"
