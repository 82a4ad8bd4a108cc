"""Question generation for the four task families.

position  - marks referenced by drawn rank ("second bar from the left"),
            combined with arithmetic; answers are numbers so the resolved
            label shown in parentheses never gives the answer away.
length    - magnitude reading along the value axis: lookups, rankings,
            comparisons, counts, arithmetic, rate of change.
pattern   - series-level aggregates where a series is referenced only by
            its color, fill pattern, or legend position, never its name.
extract   - named lookups composed through at least two operations, plus
            multiple-choice and true/false variants.

Each generator enumerates its full candidate space deterministically,
shuffles with the caller's seed, and keeps the first n candidates that
survive validity checks (no ties, no division by zero, no answer leaked
into the question text, no duplicate question on the chart).
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, replace
from decimal import Decimal

from .charts import ChartSpec, UNIT_WORDS
from .errors import (
    CapacityError,
    ConfigError,
    InvariantError,
    QueryError,
    TemplateError,
)
from .numformat import canon_number, divide
from .queries import (
    ByExtreme,
    ByLegend,
    ByName,
    ByPosition,
    ByVisual,
    Extract,
    Node,
    Op,
    QuerySpec,
    evaluate,
    infer_answer_type,
    leaf_selectors,
    op_kinds,
    render_answer,
)
from .reasoning import ReasoningTrace, build_trace, trace_from_dict, trace_to_dict
from .render import GeometryMap, positional_rank

FAMILY_NAMES = ("position", "length", "pattern", "extract")

# share of each family in a default dataset
DEFAULT_FAMILY_WEIGHTS: tuple[tuple[str, float], ...] = (
    ("position", 66617 / 331969),
    ("length", 31614 / 331969),
    ("pattern", 61268 / 331969),
    ("extract", 174411 / 331969),
)

# op kind -> operation tag on the wire
TAG_MAP = {
    "Sum": "addition",
    "Diff": "subtraction",
    "AbsDiff": "subtraction",
    "Product": "multiplication",
    "Quotient": "division",
    "Ratio": "ratio",
    "Count": "counting",
    "Rank": "ranking",
    "ArgExtreme": "ranking",
    "Mean": "average",
    "Median": "median",
    "RateOfChange": "rate_of_change",
    "Compare": "comparison",
    "OneFourthNearest": "proportion",
    "Threshold": "filtering",
}


@dataclass(frozen=True)
class QAItem:
    qa_id: str
    chart_id: str
    family: str
    ops: tuple[str, ...]
    question: str
    answer_type: str
    answer: str
    trace: ReasoningTrace
    split: str = "train"
    options: tuple[tuple[str, str], ...] | None = None
    statement: str | None = None
    query: QuerySpec | None = None  # kept in memory for re-checking; not serialized


def item_to_dict(item: QAItem) -> dict:
    out = {
        "qa_id": item.qa_id,
        "chart_id": item.chart_id,
        "task": item.family,
        "ops": list(item.ops),
        "question": item.question,
        "answer_type": item.answer_type,
        "answer": item.answer,
        "trace": trace_to_dict(item.trace),
        "split": item.split,
    }
    if item.options is not None:
        out["options"] = [[letter, text] for letter, text in item.options]
    if item.statement is not None:
        out["statement"] = item.statement
    return out


def item_from_dict(d: dict) -> QAItem:
    options = d.get("options")
    return QAItem(
        qa_id=d["qa_id"],
        chart_id=d["chart_id"],
        family=d["task"],
        ops=tuple(d["ops"]),
        question=d["question"],
        answer_type=d["answer_type"],
        answer=d["answer"],
        trace=trace_from_dict(d["trace"]),
        split=d.get("split", "train"),
        options=tuple((o[0], o[1]) for o in options) if options else None,
        statement=d.get("statement"),
    )


def operation_tags(root: Node) -> tuple[str, ...]:
    kinds = op_kinds(root)
    if not kinds:
        return ("extract",)
    return tuple(sorted({TAG_MAP[k] for k in kinds}))


# ---------------------------------------------------------------------------
# question realization

def _shape(node: Node) -> str:
    if isinstance(node, Extract):
        return f"E[{type(node.selector).__name__}]"
    inner = ",".join(_shape(c) for c in node.children)
    return f"{node.kind}({inner})"


_ORDINALS = ("first", "second", "third", "fourth", "fifth", "sixth",
             "seventh", "eighth", "ninth", "tenth")


def _ordinal(n: int) -> str:
    return _ORDINALS[n - 1] if 1 <= n <= 10 else f"{n}th"


_SIDES = {"from_top": "top", "from_bottom": "bottom",
          "from_left": "left", "from_right": "right"}


def _category_noun(spec: ChartSpec) -> str:
    if spec.is_temporal:
        return "year"
    if spec.kind == "horizontal_bar":
        return "bar"
    return "category"


def _plural(noun: str) -> str:
    return noun + "s" if not noun.endswith("y") else noun[:-1] + "ies"


def _unit_suffix(spec: ChartSpec) -> str:
    unit = spec.table.unit
    if unit == "percent":
        return "%"
    if unit == "minutes":
        return " minutes"
    return ""


def _visual_phrase(sel: ByVisual) -> str:
    if sel.color and sel.pattern:
        return f"the series shown in {sel.color} with the {sel.pattern} fill"
    if sel.color:
        return f"the series shown in {sel.color}"
    return f"the {sel.pattern} series"


def _legend_phrase(sel: ByLegend) -> str:
    return f"the {_ordinal(sel.position)} series in the legend"


def _position_phrase(sel: ByPosition, spec: ChartSpec, geom: GeometryMap) -> str:
    noun = "bar" if sel.axis == "row" else "category"
    label = positional_rank(geom, sel.axis, sel.direction, sel.rank)
    return (f"the {_ordinal(sel.rank)} {noun} from the "
            f"{_SIDES[sel.direction]} ({label})")


def _series_suffix(sel: ByName, spec: ChartSpec) -> str:
    if sel.series is not None and len(spec.table.series) > 1:
        return f" in the {sel.series} series"
    return ""


def realize_question(
    query: QuerySpec, spec: ChartSpec, rng_seed: int,
    geom: GeometryMap | None = None,
) -> str:
    """Phrase a query as an English question.

    Raises TemplateError when the query's shape has no registered
    phrasing; callers never get a half-filled template."""
    key = _shape(query.root)
    realizer = _REALIZERS.get(key)
    if realizer is None:
        raise TemplateError(f"no phrasing registered for shape {key}")
    rng = random.Random(rng_seed)
    return realizer(query, spec, geom, rng)


def _pick(rng: random.Random, variants: list[str]) -> str:
    return variants[rng.randrange(len(variants))]


# -- position phrasings ------------------------------------------------------

def _pos_pair(query, spec, geom, rng, patterns):
    a, b = (c.selector for c in query.root.children
            if isinstance(c, Extract)) if all(
        isinstance(c, Extract) for c in query.root.children
    ) else (None, None)
    pa = _position_phrase(a, spec, geom)
    pb = _position_phrase(b, spec, geom)
    return _pick(rng, patterns).format(a=pa, b=pb)


def _r_pos_diff(query, spec, geom, rng):
    return _pos_pair(query, spec, geom, rng, [
        "What is the difference between the value of {a} and the value of {b}?",
        "By how much does the value of {a} differ from the value of {b}?",
    ])


def _r_pos_absdiff(query, spec, geom, rng):
    return _pos_pair(query, spec, geom, rng, [
        "What is the absolute difference between the values of {a} and {b}?",
    ])


def _r_pos_sum2(query, spec, geom, rng):
    return _pos_pair(query, spec, geom, rng, [
        "What is the combined value of {a} and {b}?",
        "What do the values of {a} and {b} add up to?",
    ])


def _r_pos_ratio(query, spec, geom, rng):
    return _pos_pair(query, spec, geom, rng, [
        "How many times larger is the value of {a} than the value of {b}?",
    ])


def _r_pos_colsum(query, spec, geom, rng):
    sel = query.root.children[0].selector
    phrase = _position_phrase(sel, spec, geom)
    return _pick(rng, [
        f"What is the total across all series for {phrase}?",
        f"Summed over every series, what value does {phrase} reach?",
    ])


def _r_pos_colmean(query, spec, geom, rng):
    sel = query.root.children[0].selector
    phrase = _position_phrase(sel, spec, geom)
    return f"What is the average value across the series for {phrase}?"


def _r_pos_coldiff(query, spec, geom, rng):
    a = query.root.children[0].children[0].selector
    b = query.root.children[1].children[0].selector
    pa = _position_phrase(a, spec, geom)
    pb = _position_phrase(b, spec, geom)
    return (f"What is the difference between the all-series totals of "
            f"{pa} and {pb}?")


# -- length phrasings --------------------------------------------------------

def _r_len_lookup(query, spec, geom, rng):
    sel = query.root.selector
    sfx = _series_suffix(sel, spec)
    if spec.is_temporal:
        return _pick(rng, [
            f"What value was recorded in {sel.category}{sfx}?",
            f"What was the value in {sel.category}{sfx}?",
        ])
    return _pick(rng, [
        f"What value is recorded for {sel.category}{sfx}?",
        f"What value does {sel.category} show{sfx}?",
    ])


def _len_row_suffix(query, spec) -> str:
    for sel in leaf_selectors(query.root):
        if isinstance(sel, ByName) and sel.series is not None:
            return _series_suffix(sel, spec)
    return ""


def _r_len_argext(query, spec, geom, rng):
    word = "highest" if query.root.mode == "max" else "lowest"
    noun = _category_noun(spec)
    sfx = _len_row_suffix(query, spec)
    return _pick(rng, [
        f"Which {noun} records the {word} value{sfx}?",
        f"Which {noun} shows the {word} value{sfx}?",
    ])


def _r_len_rank(query, spec, geom, rng):
    word = "highest" if query.root.order == "desc" else "lowest"
    noun = _category_noun(spec)
    sfx = _len_row_suffix(query, spec)
    return f"Which {noun} has the {_ordinal(query.root.k)} {word} value{sfx}?"


def _r_len_compare(query, spec, geom, rng):
    a = query.root.children[0].selector
    b = query.root.children[1].selector
    word = {"gt": "greater", "lt": "smaller"}[query.root.relation]
    sfx = _series_suffix(a, spec)
    return (f"Is the value for {a.category} {word} than the value for "
            f"{b.category}{sfx}?")


def _threshold_bits(root: Op) -> tuple[str, str]:
    thr = root.children[0]
    relword = "above" if thr.relation == "gt" else "below"
    return relword, canon_number(thr.value)


def _r_count_threshold(query, spec, geom, rng):
    relword, bound = _threshold_bits(query.root)
    noun = _plural(_category_noun(spec))
    sfx = _len_row_suffix(query, spec)
    unit = _unit_suffix(spec)
    return _pick(rng, [
        f"How many {noun} show a value {relword} {bound}{unit}{sfx}?",
        f"How many {noun} {'exceed' if relword == 'above' else 'stay below'} "
        f"{bound}{unit}{sfx}?",
    ])


def _r_len_spread(query, spec, geom, rng):
    sfx = _len_row_suffix(query, spec)
    return _pick(rng, [
        f"What is the difference between the highest and the lowest value{sfx}?",
        f"How far apart are the highest and the lowest values{sfx}?",
    ])


def _r_len_sum2(query, spec, geom, rng):
    a = query.root.children[0].selector
    b = query.root.children[1].selector
    sfx = _series_suffix(a, spec)
    return f"What is the combined value of {a.category} and {b.category}{sfx}?"


def _r_len_ratio2(query, spec, geom, rng):
    a = query.root.children[0].selector
    b = query.root.children[1].selector
    sfx = _series_suffix(a, spec)
    return (f"How many times larger is the value for {a.category} than the "
            f"value for {b.category}{sfx}?")


def _r_len_diff2(query, spec, geom, rng):
    a = query.root.children[0].selector
    b = query.root.children[1].selector
    sfx = _series_suffix(a, spec)
    if spec.is_temporal and int(a.category) > int(b.category):
        return (f"How did the value change from {b.category} to "
                f"{a.category}{sfx}?")
    return (f"What is the difference between the values of {a.category} "
            f"and {b.category}{sfx}?")


def _r_len_rate(query, spec, geom, rng):
    most = "most" if query.root.mode == "max" else "least"
    sfx = _len_row_suffix(query, spec)
    return (f"Between which two consecutive years did the value change "
            f"the {most}{sfx}?")


def _r_len_extreme_spread(query, spec, geom, rng):
    return "What is the difference between the highest and the lowest value shown in the chart?"


# -- pattern phrasings -------------------------------------------------------

def _pattern_leaf_phrase(node: Node) -> str:
    sel = node.children[0].selector if isinstance(node, Op) else node.selector
    if isinstance(sel, ByVisual):
        return _visual_phrase(sel)
    if isinstance(sel, ByLegend):
        return _legend_phrase(sel)
    raise TemplateError(f"pattern phrasing got selector {sel!r}")


def _r_pat_diff_sum(query, spec, geom, rng):
    a = _pattern_leaf_phrase(query.root.children[0])
    b = _pattern_leaf_phrase(query.root.children[1])
    return _pick(rng, [
        f"How much higher is the combined total of {a} than that of {b}?",
        f"By how much does the overall total of {a} exceed that of {b}?",
    ])


def _r_pat_absdiff_sum(query, spec, geom, rng):
    a = _pattern_leaf_phrase(query.root.children[0])
    b = _pattern_leaf_phrase(query.root.children[1])
    return (f"What is the absolute difference between the combined totals "
            f"of {a} and {b}?")


def _r_pat_diff_median(query, spec, geom, rng):
    a = _pattern_leaf_phrase(query.root.children[0])
    b = _pattern_leaf_phrase(query.root.children[1])
    return (f"By how much does the median value of {a} exceed the median "
            f"value of {b}?")


def _r_pat_diff_mean(query, spec, geom, rng):
    a = _pattern_leaf_phrase(query.root.children[0])
    b = _pattern_leaf_phrase(query.root.children[1])
    return (f"By how much does the average value of {a} exceed the average "
            f"value of {b}?")


def _r_pat_ratio_sum(query, spec, geom, rng):
    a = _pattern_leaf_phrase(query.root.children[0])
    b = _pattern_leaf_phrase(query.root.children[1])
    return (f"How many times larger is the combined total of {a} than "
            f"that of {b}?")


def _r_pat_count_threshold(query, spec, geom, rng):
    thr = query.root.children[0]
    relword = "above" if thr.relation == "gt" else "below"
    bound = canon_number(thr.value)
    unit = _unit_suffix(spec)
    leaves = [c.selector for c in thr.children]
    if len(leaves) == 1:
        phrase = (_visual_phrase(leaves[0]) if isinstance(leaves[0], ByVisual)
                  else _legend_phrase(leaves[0]))
        return (f"For how many categories does {phrase} record a value "
                f"{relword} {bound}{unit}?")
    hue = leaves[0].color.split()[-1]
    return (f"How many of the values recorded by the series drawn in shades "
            f"of {hue} are {relword} {bound}{unit}?")


# -- extract phrasings -------------------------------------------------------

def _ext_series_suffix(query, spec) -> str:
    for sel in leaf_selectors(query.root):
        if isinstance(sel, ByName) and sel.series is not None:
            return _series_suffix(sel, spec)
    return ""


def _r_ext_top_two(query, spec, geom, rng):
    noun = _plural(_category_noun(spec))
    sfx = _ext_series_suffix(query, spec)
    return _pick(rng, [
        f"What is the combined value of the two highest {noun}{sfx}?",
        f"What do the two highest {noun} add up to{sfx}?",
    ])


def _r_ext_mean_median(query, spec, geom, rng):
    sfx = _ext_series_suffix(query, spec)
    return (f"What is the absolute difference between the average and the "
            f"median value{sfx}?")


def _r_ext_quotient(query, spec, geom, rng):
    a = query.root.children[0].children[0].selector
    b = query.root.children[0].children[1].selector
    c = query.root.children[1].selector
    sfx = _ext_series_suffix(query, spec)
    return (f"How many times larger is the combined value of {a.category} "
            f"and {b.category} than the value of {c.category}{sfx}?")


def _r_ext_ratio_extremes(query, spec, geom, rng):
    sfx = _ext_series_suffix(query, spec)
    return f"How many times larger is the highest value than the lowest{sfx}?"


def _r_ext_quarter(query, spec, geom, rng):
    thr = query.root.children[0]
    relword = "above" if thr.relation == "gt" else "below"
    bound = canon_number(thr.value)
    unit = _unit_suffix(spec)
    noun = _plural(_category_noun(spec))
    return (f"Among the {noun} with values {relword} {bound}{unit}, which "
            f"one sits closest to one quarter of their combined total?")


_REALIZERS = {
    "Diff(E[ByPosition],E[ByPosition])": _r_pos_diff,
    "AbsDiff(E[ByPosition],E[ByPosition])": _r_pos_absdiff,
    "Sum(E[ByPosition],E[ByPosition])": _r_pos_sum2,
    "Ratio(E[ByPosition],E[ByPosition])": _r_pos_ratio,
    "Sum(E[ByPosition])": _r_pos_colsum,
    "Mean(E[ByPosition])": _r_pos_colmean,
    "Diff(Sum(E[ByPosition]),Sum(E[ByPosition]))": _r_pos_coldiff,
    "E[ByName]": _r_len_lookup,
    "ArgExtreme(E[ByName])": _r_len_argext,
    "Rank(E[ByName])": _r_len_rank,
    "Compare(E[ByName],E[ByName])": _r_len_compare,
    "Count(Threshold(E[ByName]))": _r_count_threshold,
    "Diff(ArgExtreme(E[ByName]),ArgExtreme(E[ByName]))": _r_len_spread,
    "Sum(E[ByName],E[ByName])": _r_len_sum2,
    "Ratio(E[ByName],E[ByName])": _r_len_ratio2,
    "Diff(E[ByName],E[ByName])": _r_len_diff2,
    "RateOfChange(E[ByName])": _r_len_rate,
    "Diff(E[ByExtreme],E[ByExtreme])": _r_len_extreme_spread,
    "Diff(Sum(E[ByVisual]),Sum(E[ByVisual]))": _r_pat_diff_sum,
    "AbsDiff(Sum(E[ByVisual]),Sum(E[ByVisual]))": _r_pat_absdiff_sum,
    "Diff(Median(E[ByVisual]),Median(E[ByVisual]))": _r_pat_diff_median,
    "Diff(Mean(E[ByVisual]),Mean(E[ByVisual]))": _r_pat_diff_mean,
    "Ratio(Sum(E[ByVisual]),Sum(E[ByVisual]))": _r_pat_ratio_sum,
    "Count(Threshold(E[ByVisual]))": _r_pat_count_threshold,
    "Count(Threshold(E[ByVisual],E[ByVisual]))": _r_pat_count_threshold,
    "Diff(Sum(E[ByLegend]),Sum(E[ByLegend]))": _r_pat_diff_sum,
    "AbsDiff(Median(E[ByLegend]),Median(E[ByLegend]))": lambda q, s, g, r: (
        f"What is the absolute difference between the median values of "
        f"{_pattern_leaf_phrase(q.root.children[0])} and "
        f"{_pattern_leaf_phrase(q.root.children[1])}?"),
    "Sum(Rank(E[ByName]),Rank(E[ByName]))": _r_ext_top_two,
    "AbsDiff(Mean(E[ByName]),Median(E[ByName]))": _r_ext_mean_median,
    "Quotient(Sum(E[ByName],E[ByName]),E[ByName])": _r_ext_quotient,
    "Ratio(ArgExtreme(E[ByName]),ArgExtreme(E[ByName]))": _r_ext_ratio_extremes,
    "OneFourthNearest(Threshold(E[ByName]))": _r_ext_quarter,
}


def registered_shapes() -> tuple[str, ...]:
    return tuple(sorted(_REALIZERS))


# ---------------------------------------------------------------------------
# candidate enumeration

@dataclass(frozen=True)
class _Candidate:
    query: QuerySpec
    form: str = "plain"  # plain, mcq, factcheck
    target_truth: bool | None = None


def _row_node(series_name: str) -> Extract:
    return Extract(ByName(series=series_name))


def _cell(series_name: str | None, category: str) -> Extract:
    return Extract(ByName(series=series_name, category=category))


def _sorted_row(spec: ChartSpec, si: int) -> list[tuple[Decimal, str]]:
    table = spec.table
    pairs = [(table.values[si][j], table.categories[j])
             for j in range(len(table.categories))]
    return sorted(pairs)


def _thresholds(values: list[Decimal], limit: int = 3) -> list[Decimal]:
    sv = sorted(values)
    n = len(sv)
    picks = sorted({max(1, n // 3), n // 2, min(n - 1, (2 * n) // 3)})
    out: list[Decimal] = []
    for k in picks:
        if 1 <= k <= n - 1 and sv[k - 1] != sv[k]:
            mid = divide(sv[k - 1] + sv[k], Decimal(2))
            if mid not in out:
                out.append(mid)
    return out[:limit]


def position_candidates(spec: ChartSpec, geom: GeometryMap) -> list[_Candidate]:
    if spec.kind == "pie":
        return []
    axis = "row" if spec.kind == "horizontal_bar" else "column"
    directions = ROW_DIRS if axis == "row" else COL_DIRS
    n_cat = len(spec.table.categories)
    selectors: list[tuple[ByPosition, str]] = []
    for direction in directions:
        for rank in range(1, n_cat + 1):
            sel = ByPosition(rank=rank, axis=axis, direction=direction)
            label = positional_rank(geom, axis, direction, rank)
            selectors.append((sel, label))

    single = len(spec.table.series) == 1
    out: list[_Candidate] = []
    for i in range(len(selectors)):
        for j in range(i + 1, len(selectors)):
            (sa, la), (sb, lb) = selectors[i], selectors[j]
            if la == lb:
                continue
            pair = (Extract(sa), Extract(sb))
            if single:
                for kind in ("Diff", "AbsDiff", "Sum", "Ratio"):
                    out.append(_Candidate(QuerySpec(
                        Op(kind, pair), "position", "number")))
            else:
                out.append(_Candidate(QuerySpec(
                    Op("Diff", (Op("Sum", (pair[0],)), Op("Sum", (pair[1],)))),
                    "position", "number")))
    if not single:
        for sel, _ in selectors:
            out.append(_Candidate(QuerySpec(
                Op("Sum", (Extract(sel),)), "position", "number")))
            out.append(_Candidate(QuerySpec(
                Op("Mean", (Extract(sel),)), "position", "number")))
    return out


ROW_DIRS = ("from_top", "from_bottom")
COL_DIRS = ("from_left", "from_right")


def length_candidates(spec: ChartSpec, geom: GeometryMap) -> list[_Candidate]:
    if spec.kind == "pie":
        return []
    table = spec.table
    single = len(table.series) == 1
    out: list[_Candidate] = []

    for si, series in enumerate(table.series):
        name = None if single else series.name
        row_name = series.name
        row = _row_node(row_name)
        cats = table.categories

        for c in cats:
            out.append(_Candidate(QuerySpec(
                _cell(name, c), "length",
                "number")))
        for mode in ("max", "min"):
            atype = "year" if spec.is_temporal else "text"
            out.append(_Candidate(QuerySpec(
                Op("ArgExtreme", (row,), mode=mode), "length", atype)))
        for k in (2, 3):
            if k <= len(cats):
                atype = "year" if spec.is_temporal else "text"
                out.append(_Candidate(QuerySpec(
                    Op("Rank", (row,), k=k, order="desc"), "length", atype)))
        for a_i in range(len(cats)):
            for b_i in range(a_i + 1, len(cats)):
                a, b = cats[a_i], cats[b_i]
                out.append(_Candidate(QuerySpec(
                    Op("Compare", (_cell(name, a), _cell(name, b)),
                       relation="gt"),
                    "length", "boolean")))
                out.append(_Candidate(QuerySpec(
                    Op("Sum", (_cell(name, a), _cell(name, b))),
                    "length", "number")))
                out.append(_Candidate(QuerySpec(
                    Op("Ratio", (_cell(name, a), _cell(name, b))),
                    "length", "number")))
                if spec.is_temporal:
                    out.append(_Candidate(QuerySpec(
                        Op("Diff", (_cell(name, b), _cell(name, a))),
                        "length", "number")))
                else:
                    out.append(_Candidate(QuerySpec(
                        Op("Diff", (_cell(name, a), _cell(name, b))),
                        "length", "number")))
        values = [table.values[si][j] for j in range(len(cats))]
        for t in _thresholds(values):
            out.append(_Candidate(QuerySpec(
                Op("Count", (Op("Threshold", (row,), relation="gt", value=t),)),
                "length", "number")))
        out.append(_Candidate(QuerySpec(
            Op("Diff", (Op("ArgExtreme", (row,), mode="max"),
                        Op("ArgExtreme", (row,), mode="min"))),
            "length", "number")))
        if spec.is_temporal and len(cats) >= 3:
            for mode in ("max", "min"):
                out.append(_Candidate(QuerySpec(
                    Op("RateOfChange", (row,), mode=mode), "length", "text")))

    if single:
        out.append(_Candidate(QuerySpec(
            Op("Diff", (Extract(ByExtreme("max")), Extract(ByExtreme("min")))),
            "length", "number")))
    return out


def pattern_candidates(spec: ChartSpec, geom: GeometryMap) -> list[_Candidate]:
    table = spec.table
    if spec.kind == "pie" or len(table.series) < 2 or not spec.legend_visible:
        return []
    out: list[_Candidate] = []
    n = len(table.series)

    def visual(si: int) -> Extract:
        return Extract(ByVisual(color=table.series[si].color))

    def pattern_leaf(si: int) -> Extract | None:
        p = table.series[si].pattern
        if p == "solid":
            return None
        if sum(1 for s in table.series if s.pattern == p) != 1:
            return None
        return Extract(ByVisual(pattern=p))

    def row_sum(si: int) -> Decimal:
        return sum(table.values[si], Decimal(0))

    def row_median(si: int) -> Decimal:
        vals = sorted(table.values[si])
        m = len(vals) // 2
        if len(vals) % 2 == 1:
            return vals[m]
        return divide(vals[m - 1] + vals[m], Decimal(2))

    def row_mean(si: int) -> Decimal:
        return divide(row_sum(si), Decimal(len(table.values[si])))

    for i in range(n):
        for j in range(i + 1, n):
            hi, lo = (i, j) if row_sum(i) > row_sum(j) else (j, i)
            if row_sum(hi) != row_sum(lo):
                out.append(_Candidate(QuerySpec(
                    Op("Diff", (Op("Sum", (visual(hi),)),
                                Op("Sum", (visual(lo),)))),
                    "pattern", "number")))
                out.append(_Candidate(QuerySpec(
                    Op("Ratio", (Op("Sum", (visual(hi),)),
                                 Op("Sum", (visual(lo),)))),
                    "pattern", "number")))
                pa, pb = pattern_leaf(hi), pattern_leaf(lo)
                if pa is not None and pb is not None:
                    out.append(_Candidate(QuerySpec(
                        Op("AbsDiff", (Op("Sum", (pa,)), Op("Sum", (pb,)))),
                        "pattern", "number")))
            mhi, mlo = (i, j) if row_median(i) > row_median(j) else (j, i)
            if row_median(mhi) != row_median(mlo):
                out.append(_Candidate(QuerySpec(
                    Op("Diff", (Op("Median", (visual(mhi),)),
                                Op("Median", (visual(mlo),)))),
                    "pattern", "number")))
            ahi, alo = (i, j) if row_mean(i) > row_mean(j) else (j, i)
            if row_mean(ahi) != row_mean(alo):
                out.append(_Candidate(QuerySpec(
                    Op("Diff", (Op("Mean", (visual(ahi),)),
                                Op("Mean", (visual(alo),)))),
                    "pattern", "number")))

    for si in range(n):
        values = list(table.values[si])
        for t in _thresholds(values, limit=2):
            out.append(_Candidate(QuerySpec(
                Op("Count", (Op("Threshold", (visual(si),),
                                relation="gt", value=t),)),
                "pattern", "number")))

    hues: dict[str, list[int]] = {}
    for si, s in enumerate(table.series):
        hues.setdefault(s.color.split()[-1], []).append(si)
    for hue, members in sorted(hues.items()):
        if len(members) != 2:
            continue
        leaves = tuple(visual(si) for si in members)
        values = [v for si in members for v in table.values[si]]
        for t in _thresholds(values, limit=2):
            out.append(_Candidate(QuerySpec(
                Op("Count", (Op("Threshold", leaves, relation="gt", value=t),)),
                "pattern", "number")))

    legend_pairs = [(1, n)]
    if n >= 3:
        legend_pairs.append((1, 2))
    for a, b in legend_pairs:
        la, lb = Extract(ByLegend(a)), Extract(ByLegend(b))
        sa = row_sum(a - 1)
        sb = row_sum(b - 1)
        if sa != sb:
            hi, lo = (la, lb) if sa > sb else (lb, la)
            out.append(_Candidate(QuerySpec(
                Op("Diff", (Op("Sum", (hi,)), Op("Sum", (lo,)))),
                "pattern", "number")))
        if row_median(a - 1) != row_median(b - 1):
            out.append(_Candidate(QuerySpec(
                Op("AbsDiff", (Op("Median", (la,)), Op("Median", (lb,)))),
                "pattern", "number")))
    return out


def extract_candidates(spec: ChartSpec, geom: GeometryMap) -> list[_Candidate]:
    table = spec.table
    single = len(table.series) == 1
    out: list[_Candidate] = []

    for si, series in enumerate(table.series):
        name = None if single else series.name
        row = _row_node(series.name)
        cats = table.categories
        values = [table.values[si][j] for j in range(len(cats))]
        by_value = _sorted_row(spec, si)

        top_two = QuerySpec(
            Op("Sum", (Op("Rank", (row,), k=1, order="desc"),
                       Op("Rank", (row,), k=2, order="desc"))),
            "extract", "number")
        out.append(_Candidate(top_two))
        out.append(_Candidate(top_two, form="mcq"))

        spread = QuerySpec(
            Op("Diff", (Op("ArgExtreme", (row,), mode="max"),
                        Op("ArgExtreme", (row,), mode="min"))),
            "extract", "number")
        out.append(_Candidate(spread))
        out.append(_Candidate(spread, form="mcq"))

        for t in _thresholds(values):
            out.append(_Candidate(QuerySpec(
                Op("Count", (Op("Threshold", (row,), relation="gt", value=t),)),
                "extract", "number")))

        out.append(_Candidate(QuerySpec(
            Op("AbsDiff", (Op("Mean", (row,)), Op("Median", (row,)))),
            "extract", "number")))
        out.append(_Candidate(QuerySpec(
            Op("Ratio", (Op("ArgExtreme", (row,), mode="max"),
                         Op("ArgExtreme", (row,), mode="min"))),
            "extract", "number")))

        if len(cats) >= 3:
            top_labels = [lbl for _, lbl in reversed(by_value)]
            a, b = top_labels[0], top_labels[1]
            for c_lbl in top_labels[2:4]:
                q = QuerySpec(
                    Op("Quotient", (Op("Sum", (_cell(name, a), _cell(name, b))),
                                    _cell(name, c_lbl))),
                    "extract", "number")
                out.append(_Candidate(q))
            out.append(_Candidate(QuerySpec(
                Op("Quotient", (Op("Sum", (_cell(name, a), _cell(name, b))),
                                _cell(name, top_labels[2]))),
                "extract", "number"), form="mcq"))

        if len(cats) >= 4:
            for t in _thresholds(values, limit=2):
                above = [v for v in values if v > t]
                if len(above) >= 3:
                    out.append(_Candidate(QuerySpec(
                        Op("OneFourthNearest",
                           (Op("Threshold", (row,), relation="gt", value=t),)),
                        "extract", "text")))

        if len(cats) >= 3:
            for k in range(min(4, len(cats) - 2)):
                a, b = cats[k], cats[k + 1]
                c_lbl = cats[k + 2]
                out.append(_Candidate(QuerySpec(
                    Op("Compare", (Op("Sum", (_cell(name, a), _cell(name, b))),
                                   _cell(name, c_lbl)),
                       relation="gt"),
                    "extract", "boolean"),
                    form="factcheck", target_truth=k % 2 == 0))
    return out


FAMILY_CANDIDATES = {
    "position": position_candidates,
    "length": length_candidates,
    "pattern": pattern_candidates,
    "extract": extract_candidates,
}


def family_capacity(spec: ChartSpec, geom: GeometryMap, family: str) -> int:
    return len(FAMILY_CANDIDATES[family](spec, geom))


# ---------------------------------------------------------------------------
# item assembly

_LETTERS = ("A", "B", "C", "D")


def _leaks(answer: str, answer_type: str, question: str) -> bool:
    if answer_type in ("number", "year"):
        return re.search(
            rf"(?<![\d.]){re.escape(answer)}(?![\d.])", question) is not None
    if answer_type in ("text",):
        # boundaries only where the answer edge is a word character, so
        # labels ending in punctuation still register as leaks
        left = r"\b" if re.match(r"\w", answer) else ""
        right = r"\b" if re.search(r"\w$", answer) else ""
        return re.search(
            left + re.escape(answer) + right, question,
            re.IGNORECASE) is not None
    return False


def _mcq_options(
    gold: Decimal, table_values: list[Decimal], rng: random.Random
) -> tuple[tuple[str, str], ...] | None:
    gold_text = canon_number(gold)
    pool: list[str] = []
    for factor in ("0.8", "0.85", "0.9", "1.1", "1.15", "1.2"):
        cand = canon_number(
            (gold * Decimal(factor)).quantize(Decimal("0.1")))
        if cand != gold_text and cand not in pool:
            pool.append(cand)
    decoys = [canon_number(v) for v in table_values
              if canon_number(v) != gold_text]
    rng.shuffle(decoys)
    distractors: list[str] = []
    if decoys:
        distractors.append(decoys[0])
    for cand in pool:
        if len(distractors) == 3:
            break
        if cand not in distractors:
            distractors.append(cand)
    if len(distractors) < 3:
        return None
    texts = [gold_text] + distractors[:3]
    rng.shuffle(texts)
    return tuple(zip(_LETTERS, texts))


def _statement_text(query: QuerySpec, spec: ChartSpec) -> str:
    root = query.root
    a = root.children[0].children[0].selector
    b = root.children[0].children[1].selector
    c = root.children[1].selector
    word = "greater" if root.relation == "gt" else "smaller"
    sfx = _series_suffix(a, spec)
    return (f"The combined value of {a.category} and {b.category} is {word} "
            f"than the value of {c.category}{sfx}.")


def _assemble(
    spec: ChartSpec,
    geom: GeometryMap,
    cand: _Candidate,
    qa_id: str,
    rng: random.Random,
    taken: set[str],
    skip_log: list[str] | None,
) -> QAItem | None:
    def skip(reason: str) -> None:
        if skip_log is not None:
            skip_log.append(f"{spec.chart_id} {cand.query.family}: {reason}")

    query = cand.query
    try:
        value = evaluate(query.root, spec, geom)
    except QueryError as exc:
        skip(f"unanswerable ({exc})")
        return None

    if cand.form == "factcheck":
        want = bool(cand.target_truth)
        if bool(value) is not want:
            flipped = replace(query.root, relation="lt" if query.root.relation == "gt" else "gt")
            query = QuerySpec(flipped, query.family, query.answer_type)
            try:
                value = evaluate(query.root, spec, geom)
            except QueryError as exc:
                skip(f"unanswerable after flip ({exc})")
                return None
            if bool(value) is not want:
                skip("statement cannot reach the target truth value")
                return None

    answer = render_answer(value)
    answer_type = query.answer_type
    inferred = infer_answer_type(value)
    if answer_type != inferred and cand.form == "plain":
        skip(f"answer type drifted ({answer_type} vs {inferred})")
        return None

    options = None
    statement = None
    if cand.form == "mcq":
        if not isinstance(value, Decimal):
            skip("mcq needs a numeric answer")
            return None
        flat = [v for rw in spec.table.values for v in rw]
        options = _mcq_options(value, flat, rng)
        if options is None:
            skip("could not build three distinct distractors")
            return None
        answer_type = "mcq"
    elif cand.form == "factcheck":
        statement = _statement_text(query, spec)

    try:
        if cand.form == "factcheck":
            question = f"Is the following statement true or false? {statement}"
        else:
            question = realize_question(query, spec, rng.randrange(2 ** 31), geom)
    except TemplateError:
        raise
    except QueryError as exc:
        skip(f"phrasing failed ({exc})")
        return None

    try:
        trace = build_trace(query, spec, geom, mcq_options=options)
    except QueryError as exc:
        skip(f"trace failed ({exc})")
        return None

    if cand.form == "mcq":
        answer = trace.final  # the option letter
    if answer != trace.final:
        raise InvariantError(
            f"trace final {trace.final!r} disagrees with answer {answer!r}")

    check_answer = answer if cand.form != "mcq" else canon_number(value)
    check_type = answer_type if cand.form != "mcq" else "number"
    if _leaks(check_answer, check_type, question):
        skip(f"answer {check_answer!r} appears in the question")
        return None

    key = question.casefold()
    if key in taken:
        skip("duplicate question text on this chart")
        return None
    taken.add(key)

    return QAItem(
        qa_id=qa_id,
        chart_id=spec.chart_id,
        family=query.family,
        ops=operation_tags(query.root),
        question=question,
        answer_type=answer_type,
        answer=answer,
        trace=trace,
        options=options,
        statement=statement,
        query=query,
    )


def _generate(
    family: str,
    spec: ChartSpec,
    geom: GeometryMap,
    n: int,
    seed: int,
    taken: set[str] | None = None,
    skip_log: list[str] | None = None,
    strict: bool = True,
) -> list[QAItem]:
    if n <= 0:
        return []
    candidates = FAMILY_CANDIDATES[family](spec, geom)
    if strict and n > len(candidates):
        raise CapacityError(
            f"{spec.chart_id} supports at most {len(candidates)} "
            f"{family} questions, {n} requested")
    rng = random.Random(seed)
    order = list(candidates)
    rng.shuffle(order)
    taken = taken if taken is not None else set()
    items: list[QAItem] = []
    for cand in order:
        if len(items) == n:
            break
        qa_id = f"{spec.chart_id}-{family}-{len(items) + 1:03d}"
        item = _assemble(spec, geom, cand, qa_id, rng, taken, skip_log)
        if item is not None:
            items.append(item)
    if strict and len(items) < n:
        raise CapacityError(
            f"{spec.chart_id} yielded {len(items)} valid {family} questions "
            f"out of {len(candidates)} candidates, {n} requested")
    return items


def gen_position(spec, geom, n, seed, **kw) -> list[QAItem]:
    return _generate("position", spec, geom, n, seed, **kw)


def gen_length(spec, geom, n, seed, **kw) -> list[QAItem]:
    return _generate("length", spec, geom, n, seed, **kw)


def gen_pattern(spec, geom, n, seed, **kw) -> list[QAItem]:
    return _generate("pattern", spec, geom, n, seed, **kw)


def gen_extract(spec, geom, n, seed, **kw) -> list[QAItem]:
    return _generate("extract", spec, geom, n, seed, **kw)


# ---------------------------------------------------------------------------
# cross-chart scheduling

@dataclass(frozen=True)
class GenConfig:
    per_chart: int = 12
    family_weights: tuple[tuple[str, float], ...] = DEFAULT_FAMILY_WEIGHTS
    seed: int = 0

    def validate(self) -> None:
        if self.per_chart < 1:
            raise ConfigError("per_chart must be at least 1")
        for family, _ in self.family_weights:
            if family not in FAMILY_NAMES:
                raise ConfigError(f"unknown family in weights: {family!r}")
        weights = [w for _, w in self.family_weights]
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ConfigError(
                "family weights must be non-negative with at least one positive")


def stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def feasible_families(spec: ChartSpec, geom: GeometryMap) -> set[str]:
    out = {"extract"}
    if spec.kind != "pie":
        out.add("position")
        out.add("length")
    if spec.kind != "pie" and len(spec.table.series) >= 2 and spec.legend_visible:
        out.add("pattern")
    return out


@dataclass
class GenStats:
    emitted: dict
    shortfall: int
    skips: list[str]


def generate_items(
    charts: list[tuple[ChartSpec, GeometryMap]],
    config: GenConfig | None = None,
) -> tuple[list[QAItem], GenStats]:
    """Generate questions across charts, steering the realized family mix
    toward the configured weights while respecting per-chart feasibility."""
    config = config or GenConfig()
    config.validate()
    if not charts:
        raise ConfigError("no charts to generate questions from")
    # normalize processing order so the same chart set yields the same
    # items no matter how the caller happened to order the list
    charts = sorted(charts, key=lambda pair: pair[0].chart_id)
    weights = dict(config.family_weights)
    counts = {f: 0 for f in FAMILY_NAMES}
    total = 0
    items: list[QAItem] = []
    skips: list[str] = []
    shortfall = 0

    for spec, geom in charts:
        feasible = feasible_families(spec, geom)
        caps = {
            f: family_capacity(spec, geom, f)
            for f in feasible
        }
        plan = {f: 0 for f in feasible}
        for _ in range(config.per_chart):
            open_families = [f for f in feasible if plan[f] < caps[f]]
            if not open_families:
                shortfall += config.per_chart - sum(plan.values())
                break
            best = max(
                open_families,
                key=lambda f: (weights.get(f, 0) * (total + 1) - counts[f], f),
            )
            plan[best] += 1
            counts[best] += 1
            total += 1

        taken: set[str] = set()
        for family in FAMILY_NAMES:
            want = plan.get(family, 0)
            if not want:
                continue
            got = _generate(
                family, spec, geom, want,
                stable_seed(config.seed, spec.chart_id, family),
                taken=taken, skip_log=skips, strict=False,
            )
            items.extend(got)
            if len(got) < want:
                # return the unmet share to the pool so later charts absorb it
                counts[family] -= want - len(got)
                total -= want - len(got)
                shortfall += want - len(got)

    emitted = {f: 0 for f in FAMILY_NAMES}
    for item in items:
        emitted[item.family] += 1
    return items, GenStats(emitted=emitted, shortfall=shortfall, skips=skips)
