"""perceptqa: deterministic chart rendering, question synthesis, and scoring.

The package turns seeded chart specifications into SVG charts with a
geometry side-channel, derives perception-grounded questions with exact
gold answers and step-by-step reasoning traces, and scores model output
under relaxed-accuracy, edit-distance, and exact-match protocols.
"""

from .charts import ChartSpec, DataTable, SeriesDescriptor, sample_chart_spec
from .errors import PerceptQAError
from .qagen import GenConfig, QAItem, generate_items
from .queries import QuerySpec, oracle_eval
from .reasoning import ReasoningTrace, build_trace, format_trace, parse_trace
from .render import GeometryMap, render_chart

__version__ = "0.1.0"

__all__ = [
    "ChartSpec",
    "DataTable",
    "SeriesDescriptor",
    "sample_chart_spec",
    "PerceptQAError",
    "GenConfig",
    "QAItem",
    "generate_items",
    "QuerySpec",
    "oracle_eval",
    "ReasoningTrace",
    "build_trace",
    "format_trace",
    "parse_trace",
    "GeometryMap",
    "render_chart",
    "__version__",
]
