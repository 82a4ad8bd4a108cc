"""Shared fixtures: pinned worked examples and seeded chart pools.

The four pinned charts are hand-authored so their gold answers can be
checked against independently worked arithmetic: a two-series revenue
chart whose extremes differ by 449329, a two-line minutes chart whose
medians differ by 30.5, a five-bar seat count whose quarter-of-total
falls nearest one named group, and a four-slice pie whose extremes
differ by 49.
"""

from __future__ import annotations

from decimal import Decimal

import pytest

from perceptqa.charts import (
    ChartSpec,
    DataTable,
    SeriesDescriptor,
    require_valid,
)
from perceptqa.queries import ByName, ByVisual, Extract, Op, QuerySpec


def _dec(values):
    return tuple(Decimal(v) for v in values)


# ---------------------------------------------------------------------------
# pinned chart 1: range of the dark purple series


@pytest.fixture(scope="session")
def revenue_chart():
    spec = require_valid(ChartSpec(
        chart_id="pinned-revenue",
        kind="grouped_bar",
        title="Revenue by region",
        table=DataTable(
            categories=("The Americas", "Europe", "Japan", "Other"),
            series=(
                SeriesDescriptor("2020", "dark purple"),
                SeriesDescriptor("2019", "light purple"),
            ),
            values=(
                _dec(("565023", "326613", "301187", "115694")),
                _dec(("512000", "301000", "289000", "98000")),
            ),
            unit=None,
        ),
        axis_labels=("Region", "Revenue"),
        legend_visible=True,
        seed=0,
    ))
    row = Extract(ByVisual(color="dark purple"))
    query = QuerySpec(
        root=Op("Diff", (
            Op("ArgExtreme", (row,), mode="max"),
            Op("ArgExtreme", (row,), mode="min"),
        )),
        family="position",
        answer_type="number",
    )
    return spec, query, "449329"


# ---------------------------------------------------------------------------
# pinned chart 2: gap between two line medians


@pytest.fixture(scope="session")
def minutes_chart():
    spec = require_valid(ChartSpec(
        chart_id="pinned-minutes",
        kind="line",
        title="Daily screen time",
        table=DataTable(
            categories=tuple(str(y) for y in range(2010, 2020)),
            series=(
                SeriesDescriptor("Women", "dark gray"),
                SeriesDescriptor("Men", "dark blue"),
            ),
            values=(
                _dec(("220", "225", "228", "231", "233",
                      "234", "238", "241", "244", "247")),
                _dec(("190", "193", "196", "199", "202",
                      "204", "207", "210", "213", "216")),
            ),
            unit="minutes",
        ),
        axis_labels=("Year", "Minutes"),
        legend_visible=True,
        seed=0,
    ))
    query = QuerySpec(
        root=Op("Diff", (
            Op("Median", (Extract(ByVisual(color="dark gray")),)),
            Op("Median", (Extract(ByVisual(color="dark blue")),)),
        )),
        family="length",
        answer_type="number",
    )
    return spec, query, "30.5"


# ---------------------------------------------------------------------------
# pinned chart 3: value nearest one quarter of the total


@pytest.fixture(scope="session")
def seats_chart():
    spec = require_valid(ChartSpec(
        chart_id="pinned-seats",
        kind="vertical_bar",
        title="Seats by group",
        table=DataTable(
            categories=(
                "Conservative (EPP)",
                "Center-left (S&D)",
                "Liberal (RE)",
                "Green (G/EFA)",
                "Right (ID)",
            ),
            series=(SeriesDescriptor("Seats", "dark blue"),),
            values=(_dec(("187", "146", "98", "76", "59")),),
            unit="count",
        ),
        axis_labels=("Group", "Seats"),
        legend_visible=False,
        seed=0,
    ))
    query = QuerySpec(
        root=Op("OneFourthNearest", (Extract(ByName(series="Seats")),)),
        family="pattern",
        answer_type="text",
    )
    return spec, query, "Center-left (S&D)"


# ---------------------------------------------------------------------------
# pinned chart 4: spread between the largest and smallest slice


@pytest.fixture(scope="session")
def usage_chart():
    spec = require_valid(ChartSpec(
        chart_id="pinned-usage",
        kind="pie",
        title="Subscriber mix",
        table=DataTable(
            categories=("Regular user", "Occasional user",
                        "Rare user", "Seasonal user"),
            series=(SeriesDescriptor("Users", "dark orange"),),
            values=(_dec(("53", "28", "15", "4")),),
            unit="percent",
        ),
        axis_labels=None,
        legend_visible=False,
        seed=0,
    ))
    row = Extract(ByName(series="Users"))
    query = QuerySpec(
        root=Op("Diff", (
            Op("ArgExtreme", (row,), mode="max"),
            Op("ArgExtreme", (row,), mode="min"),
        )),
        family="extract",
        answer_type="number",
    )
    return spec, query, "49"


@pytest.fixture(scope="session")
def pinned_charts(revenue_chart, minutes_chart, seats_chart, usage_chart):
    return [revenue_chart, minutes_chart, seats_chart, usage_chart]
