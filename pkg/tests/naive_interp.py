"""A second, independent reading of serialized charts and queries.

This interpreter double-checks gold answers.  It consumes only the
written interchange forms (chart JSON text, geometry dicts, query
dicts), does its arithmetic in fractions, and renders its own strings.
It deliberately imports nothing from the package under test, so the two
routes can only agree by computing the same thing.
"""

from __future__ import annotations

import json
from fractions import Fraction

_SCALE = 10 ** 4

RELATIONS = {
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
}


class NaiveError(Exception):
    pass


class NaiveTie(NaiveError):
    pass


def parse_chart(text: str) -> dict:
    # parse_float receives the literal token, so fractions stay exact
    return json.loads(text, parse_float=Fraction)


def _divide(a: Fraction, b: Fraction) -> Fraction:
    """Quotient rounded half away from zero at four decimal places."""
    if b == 0:
        raise NaiveError("division by zero")
    q = a / b
    sign = -1 if q < 0 else 1
    scaled = abs(q) * _SCALE
    whole, rem = divmod(scaled.numerator, scaled.denominator)
    if rem * 2 >= scaled.denominator:
        whole += 1
    return Fraction(sign * whole, _SCALE)


def render_number(x: Fraction) -> str:
    if x == 0:
        return "0"
    sign = "-" if x < 0 else ""
    n, d = abs(x).numerator, abs(x).denominator
    places = 0
    while n % d != 0:
        n *= 10
        places += 1
        if places > 40:
            raise NaiveError(f"{x} has no terminating decimal form")
    digits = str(n // d)
    if places == 0:
        return sign + digits
    digits = digits.rjust(places + 1, "0")
    whole, frac = digits[:-places], digits[-places:]
    frac = frac.rstrip("0")
    return sign + whole + (f".{frac}" if frac else "")


# ---------------------------------------------------------------------------
# cell resolution
#
# A cell is (series_name, category_label, value, display_label).

def _rows(chart: dict) -> list[list[Fraction]]:
    return [[Fraction(v) for v in row] for row in chart["values"]]


def _series_index(chart: dict, name: str) -> int:
    for i, s in enumerate(chart["series"]):
        if s["name"] == name:
            return i
    raise NaiveError(f"no series named {name!r}")


def _row_cells(chart: dict, si: int) -> list[tuple]:
    values = _rows(chart)
    name = chart["series"][si]["name"]
    return [
        (name, cat, values[si][j], cat)
        for j, cat in enumerate(chart["categories"])
    ]


def _column_cells(chart: dict, label: str) -> list[tuple]:
    values = _rows(chart)
    cj = chart["categories"].index(label)
    return [
        (s["name"], label, values[i][cj], s["name"])
        for i, s in enumerate(chart["series"])
    ]


def _ordered_category_indices(geom: dict, axis: str, direction: str) -> list[int]:
    coord = 1 if axis == "row" else 0
    reverse = direction in ("from_bottom", "from_right")
    centers: dict[int, list[float]] = {}
    for m in geom["marks"]:
        centers.setdefault(m["category"], []).append(m["anchor"][coord])
    return sorted(
        centers,
        key=lambda c: sum(centers[c]) / len(centers[c]),
        reverse=reverse,
    )


def _rank_pick(cells: list[tuple], k: int, order: str) -> tuple:
    if not 1 <= k <= len(cells):
        raise NaiveError(f"rank {k} out of range")
    ordered = sorted(cells, key=lambda c: c[2], reverse=order == "desc")
    pick = ordered[k - 1]
    if k >= 2 and ordered[k - 2][2] == pick[2]:
        raise NaiveTie(f"rank {k} tied")
    if k < len(ordered) and ordered[k][2] == pick[2]:
        raise NaiveTie(f"rank {k} tied")
    return pick


def resolve(sel: dict, chart: dict, geom: dict | None) -> list[tuple]:
    tag = sel["sel"]

    if tag == "ByName":
        series, category = sel.get("series"), sel.get("category")
        if series is not None:
            si = _series_index(chart, series)
            if category is not None:
                cj = chart["categories"].index(category)
                return [(series, category, _rows(chart)[si][cj], category)]
            return _row_cells(chart, si)
        if category is not None:
            return _column_cells(chart, category)
        raise NaiveError("ByName lacks both series and category")

    if tag == "ByPosition":
        if geom is None:
            raise NaiveError("ByPosition needs geometry")
        ordered = _ordered_category_indices(geom, sel["axis"], sel["direction"])
        label = geom["categories"][ordered[sel["rank"] - 1]]
        return _column_cells(chart, label)

    if tag == "ByVisual":
        color, pattern = sel.get("color"), sel.get("pattern")
        hits = [
            i for i, s in enumerate(chart["series"])
            if (color is None or s["color"] == color)
            and (pattern is None or s["pattern"] == pattern)
        ]
        if len(hits) != 1:
            raise NaiveError(f"{len(hits)} series match the visual cue")
        return _row_cells(chart, hits[0])

    if tag == "ByLegend":
        if geom is None or not geom.get("legend"):
            raise NaiveError("ByLegend needs a drawn legend")
        boxes = sorted(geom["legend"], key=lambda b: (b["y"], b["x"]))
        pos = sel["position"]
        if not 1 <= pos <= len(boxes):
            raise NaiveError(f"legend has no entry {pos}")
        return _row_cells(chart, boxes[pos - 1]["series"])

    if tag == "ByExtreme":
        values = _rows(chart)
        multi = len(chart["series"]) > 1
        cells = []
        for i, s in enumerate(chart["series"]):
            for j, cat in enumerate(chart["categories"]):
                label = f"{s['name']}, {cat}" if multi else cat
                cells.append((s["name"], cat, values[i][j], label))
        order = "desc" if sel["mode"] == "max" else "asc"
        return [_rank_pick(cells, sel.get("k", 1), order)]

    raise NaiveError(f"unknown selector {tag!r}")


# ---------------------------------------------------------------------------
# expression evaluation

def _scalar(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, list) and len(value) == 1:
        return value[0][2]
    raise NaiveError(f"expected one value, got {value!r}")


def _gather(node: dict, chart: dict, geom: dict | None) -> list[tuple]:
    cells: list[tuple] = []
    for child in node.get("children", []):
        got = eval_node(child, chart, geom)
        if not isinstance(got, list):
            raise NaiveError(f"{node['op']} needs cells, got {got!r}")
        cells.extend(got)
    return cells


def eval_node(node: dict, chart: dict, geom: dict | None):
    op = node["op"]

    if op == "Extract":
        cells = resolve(node["selector"], chart, geom)
        if not cells:
            raise NaiveError("selector matched nothing")
        return cells

    children = node.get("children", [])

    if op in ("Sum", "Mean", "Median"):
        values: list[Fraction] = []
        for child in children:
            got = eval_node(child, chart, geom)
            if isinstance(got, list):
                values.extend(c[2] for c in got)
            else:
                values.append(_scalar(got))
        if not values:
            raise NaiveError(f"{op} over nothing")
        total = sum(values, Fraction(0))
        if op == "Sum":
            return total
        if op == "Mean":
            return _divide(total, Fraction(len(values)))
        ordered = sorted(values)
        mid = len(ordered) // 2
        if len(ordered) % 2 == 1:
            return ordered[mid]
        return _divide(ordered[mid - 1] + ordered[mid], Fraction(2))

    if op in ("Diff", "AbsDiff", "Product", "Quotient", "Ratio", "Compare"):
        a = _scalar(eval_node(children[0], chart, geom))
        b = _scalar(eval_node(children[1], chart, geom))
        if op == "Diff":
            return a - b
        if op == "AbsDiff":
            return abs(a - b)
        if op == "Product":
            return a * b
        if op in ("Quotient", "Ratio"):
            return _divide(a, b)
        return RELATIONS[node["relation"]](a, b)

    if op == "Threshold":
        bound = Fraction(node["value"])
        test = RELATIONS[node["relation"]]
        return [c for c in _gather(node, chart, geom) if test(c[2], bound)]

    if op == "Count":
        return Fraction(len(_gather(node, chart, geom)))

    if op == "Rank":
        return [_rank_pick(_gather(node, chart, geom), node["k"], node["order"])]

    if op == "ArgExtreme":
        order = "desc" if node["mode"] == "max" else "asc"
        return [_rank_pick(_gather(node, chart, geom), 1, order)]

    if op == "OneFourthNearest":
        cells = _gather(node, chart, geom)
        total = sum((c[2] for c in cells), Fraction(0))
        target = _divide(total, Fraction(4))
        best, best_gap, tied = None, None, False
        for c in cells:
            gap = abs(c[2] - target)
            if best_gap is None or gap < best_gap:
                best, best_gap, tied = c, gap, False
            elif gap == best_gap:
                tied = True
        if tied or best is None:
            raise NaiveTie("quarter target equidistant")
        return [best]

    if op == "RateOfChange":
        cells = _gather(node, chart, geom)
        if len(cells) < 2:
            raise NaiveError("RateOfChange needs two cells")
        deltas = [
            (abs(cells[i + 1][2] - cells[i][2]), i)
            for i in range(len(cells) - 1)
        ]
        pick = max if node["mode"] == "max" else min
        best = pick(d for d, _ in deltas)
        hits = [i for d, i in deltas if d == best]
        if len(hits) > 1:
            raise NaiveTie("two intervals share the extreme change")
        i = hits[0]
        return f"{cells[i][3]} to {cells[i + 1][3]}"

    raise NaiveError(f"unknown op {op!r}")


def render_value(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, Fraction):
        return render_number(value)
    if isinstance(value, str):
        return value
    if isinstance(value, list) and len(value) == 1:
        return value[0][3]
    raise NaiveError(f"unrenderable {value!r}")


def eval_query(query: dict, chart_text: str, geom: dict | None) -> str:
    """Answer a serialized query against serialized chart artifacts."""
    chart = parse_chart(chart_text)
    return render_value(eval_node(query["root"], chart, geom))
