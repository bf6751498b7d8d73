# src/harbench/report.py
"""
Result tables and plot data

Peak / median / delta tables in the layout of a
best-results-per-model table, and two-column text
files (x y per line) for cumulative score curves and
importance bars.
"""

import os
from collections.abc import Sequence
from dataclasses import dataclass

from loguru import logger

from harbench.errors import RejectedInputError
from harbench.fanova import Analysis
from harbench.hypersearch import (
  FamilySummary,
  ScoreSummary,
  summarize,
)
from harbench.metrics import LITERAL_FACTOR
from harbench.records import ExperimentRecord
from harbench.search_space import FAMILIES
from harbench.templates import ReportTemplate, load_template

#

CATEGORY_ORDER = (
  "learning",
  "regularisation",
  "architecture",
  "interactions",
)

#


@dataclass
class Report:
  """Summaries per dataset, then per family."""

  datasets: dict[str, dict[str, FamilySummary]]
  literal: bool = False


def _scaled(summary: ScoreSummary, factor: float) -> ScoreSummary:
  return ScoreSummary(
    peak=summary.peak * factor,
    median=summary.median * factor,
    delta=summary.delta * factor,
    cdf=[(x * factor, y) for x, y in summary.cdf],
  )


def build_report(
  records: Sequence[ExperimentRecord], literal: bool = False
) -> Report:
  """
  Raises
  ------
  RejectedInputError
      If there are no records.
  """
  if not records:
    raise RejectedInputError("No records to report on")
  factor = LITERAL_FACTOR if literal else 1.0
  grouped: dict[str, list[ExperimentRecord]] = {}
  for record in records:
    grouped.setdefault(record.dataset, []).append(record)
  datasets = {}
  for dataset, group in sorted(grouped.items()):
    summaries = summarize(group)
    datasets[dataset] = {
      family: FamilySummary(
        family=family,
        count=s.count,
        mean_f1=_scaled(s.mean_f1, factor),
        weighted_f1=_scaled(s.weighted_f1, factor),
        binary_f1=(
          _scaled(s.binary_f1, factor)
          if s.binary_f1 is not None
          else None
        ),
      )
      for family, s in summaries.items()
    }
  return Report(datasets=datasets, literal=literal)


def _family_order(family: str) -> int:
  return FAMILIES.index(family) if family in FAMILIES else 99


def render_report(
  report: Report, template: ReportTemplate | None = None
) -> str:
  template = template or load_template("report/table")
  digits = int(template.setting("precision", 3))

  def fmt(value: float) -> str:
    return f"{value:.{digits}f}"

  sections = []
  for dataset, summaries in report.datasets.items():
    rows = [
      {
        "family": s.family,
        "count": s.count,
        "peak_m": fmt(s.mean_f1.peak),
        "peak_w": fmt(s.weighted_f1.peak),
        "median_m": fmt(s.mean_f1.median),
        "delta_m": fmt(s.mean_f1.delta),
        "median_w": fmt(s.weighted_f1.median),
        "delta_w": fmt(s.weighted_f1.delta),
        "peak_b": fmt(s.binary_f1.peak) if s.binary_f1 else "",
        "median_b": (
          fmt(s.binary_f1.median) if s.binary_f1 else ""
        ),
        "delta_b": (
          fmt(s.binary_f1.delta) if s.binary_f1 else ""
        ),
      }
      for s in sorted(
        summaries.values(),
        key=lambda s: _family_order(s.family),
      )
    ]
    binary = any(
      s.binary_f1 is not None for s in summaries.values()
    )
    sections.append(
      {"dataset": dataset, "rows": rows, "binary": binary}
    )
  return template.render(
    sections=sections, literal=report.literal
  )


def write_points(
  path: str,
  points: Sequence[tuple[float, float]],
  header: str = "",
) -> str:
  """One "x y" line per point, after `# header`."""
  with open(path, "w", encoding="utf-8") as f:
    if header:
      f.write(f"# {header}\n")
    for x, y in points:
      f.write(f"{x!r} {y!r}\n")
  return path


def write_cdf_files(report: Report, out_dir: str) -> list[str]:
  """
  `cdf_<family>.dat` with the F_m curve of every
  family; the dataset id is added to the name when
  the report spans several datasets.
  """
  os.makedirs(out_dir, exist_ok=True)
  several = len(report.datasets) > 1
  paths = []
  for dataset, summaries in report.datasets.items():
    for family, summary in summaries.items():
      stem = f"{dataset}_{family}" if several else family
      paths.append(
        write_points(
          os.path.join(out_dir, f"cdf_{stem}.dat"),
          summary.mean_f1.cdf,
          f"{dataset} {family}: test F_m, "
          "fraction of runs ≤ F_m",
        )
      )
  logger.info(f"Wrote {len(paths)} CDF files to {out_dir}")
  return paths


def write_importance_file(
  analysis: Analysis, out_dir: str
) -> str:
  """
  `importance_<family>.dat`: one block of
  (category index, fraction) points and one of
  (parameter rank, fraction) points, separated by a
  blank line.
  """
  path = os.path.join(
    out_dir, f"importance_{analysis.family}.dat"
  )
  categories = [
    (float(i), analysis.categories.get(name, 0.0))
    for i, name in enumerate(CATEGORY_ORDER)
  ]
  ranked = analysis.ranked()
  with open(path, "w", encoding="utf-8") as f:
    f.write(
      f"# {analysis.family} categories: "
      f"{' '.join(CATEGORY_ORDER)}\n"
    )
    for x, y in categories:
      f.write(f"{x!r} {y!r}\n")
    f.write("\n\n")
    f.write(
      f"# {analysis.family} parameters: "
      f"{' '.join(name for name, _ in ranked)}\n"
    )
    for i, (_, fraction) in enumerate(ranked):
      f.write(f"{float(i)!r} {fraction!r}\n")
  return path
