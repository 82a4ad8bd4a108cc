"""Shared non-fixture helpers for the test suite."""

from __future__ import annotations

from perceptqa.charts import sample_chart_spec
from perceptqa.render import render_chart

_pool_cache: list = []


def _grow(n: int) -> None:
    while len(_pool_cache) < n:
        spec = sample_chart_spec(len(_pool_cache))
        svg, geom = render_chart(spec)
        _pool_cache.append((spec, svg, geom))


def chart_pool(n: int):
    """First n seeded charts as (spec, geometry) pairs; cached."""
    _grow(n)
    return [(spec, geom) for spec, _, geom in _pool_cache[:n]]


def rendered_pool(n: int):
    """First n seeded charts as (spec, svg, geometry) triples; cached."""
    _grow(n)
    return _pool_cache[:n]
