"""Evaluation protocol: per-domain AUC, low-FPR partial AUC, official score.

All metrics are exact pairwise counts, not trapezoid approximations:

    AUC(m, n, d)  = (1 / (Nn_d * Na)) * sum_ij H(score(anomaly_j) - score(normal_i))

with H(y) = 1 iff y > 0 (ties count zero), normals drawn from domain d of the
section and anomalies from *both* domains of the section. The partial AUC
restricts the normals to the floor(p * Nn) highest-scoring ones, pooled
across domains, and normalizes by floor(p * Nn) * Na. The official score is
the harmonic mean over every section's {AUC_source, AUC_target, pAUC}; any
zero constituent makes it 0 (flagged, not an exception).

The sort-based counting below is exact: it performs the same float
comparisons as the brute-force double loop.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

DEFAULT_PAUC_P = 0.1


@dataclass
class ScoredClip:
    path: str
    machine_type: str
    section: str
    domain: str
    condition: str
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise UndefinedMetricError(f"non-finite score for {self.path}")


@dataclass
class ScoredTestSet:
    clips: list[ScoredClip]

    def sections(self) -> list[tuple[str, str]]:
        return sorted({(c.machine_type, c.section) for c in self.clips})

    def section_clips(self, machine: str, section: str) -> list[ScoredClip]:
        return [c for c in self.clips
                if c.machine_type == machine and c.section == section]


def _pairwise_fraction(normal_scores: np.ndarray, anomaly_scores: np.ndarray) -> float:
    """Fraction of (normal, anomaly) pairs with anomaly score strictly higher."""
    normals = np.sort(np.asarray(normal_scores, dtype=np.float64))
    anomalies = np.asarray(anomaly_scores, dtype=np.float64)
    wins = int(np.searchsorted(normals, anomalies, side="left").sum())
    return wins / (normals.size * anomalies.size)


def auc_domain(scored: ScoredTestSet, machine: str, section: str, domain: str) -> float:
    """AUC for one domain of one section; anomalies pooled from both domains."""
    clips = scored.section_clips(machine, section)
    normals = [c.score for c in clips if c.condition == "normal" and c.domain == domain]
    anomalies = [c.score for c in clips if c.condition == "anomaly"]
    if not normals:
        raise UndefinedMetricError(
            f"{machine}/{section}: no normal test clips in domain {domain!r}")
    if not anomalies:
        raise UndefinedMetricError(f"{machine}/{section}: no anomalous test clips")
    return _pairwise_fraction(np.array(normals), np.array(anomalies))


def pauc_section(scored: ScoredTestSet, machine: str, section: str,
                 p: float = DEFAULT_PAUC_P) -> float:
    """Partial AUC over the low false-positive range [0, p] for one section.

    Only the floor(p * Nn) normals with the highest scores enter the pairwise
    count (ties at the cut broken by clip path for reproducibility; equal
    scores give the same value either way).
    """
    if not (0.0 < p <= 1.0):
        raise UndefinedMetricError(f"p must be in (0, 1], got {p}")
    clips = scored.section_clips(machine, section)
    normals = [c for c in clips if c.condition == "normal"]
    anomalies = [c.score for c in clips if c.condition == "anomaly"]
    if not anomalies:
        raise UndefinedMetricError(f"{machine}/{section}: no anomalous test clips")
    top_count = int(np.floor(p * len(normals)))
    if top_count < 1:
        raise UndefinedMetricError(
            f"{machine}/{section}: floor(p * {len(normals)}) = 0 normals in range")
    ranked = sorted(normals, key=lambda c: (-c.score, c.path))[:top_count]
    return _pairwise_fraction(np.array([c.score for c in ranked]), np.array(anomalies))


def official_score(values) -> tuple[float, bool]:
    """Harmonic mean of the given metric values.

    Returns (score, zero_flag). A zero constituent yields (0.0, True), the
    harmonic-mean limit, rather than raising.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise UndefinedMetricError("official score of an empty value set")
    if any(v < 0 or v > 1 for v in vals):
        raise UndefinedMetricError(f"metric values outside [0, 1]: {vals}")
    if any(v == 0.0 for v in vals):
        return 0.0, True
    return len(vals) / sum(1.0 / v for v in vals), False


@dataclass
class SectionMetrics:
    machine_type: str
    section: str
    auc_source: float | None
    auc_target: float | None
    pauc: float | None
    errors: list[str] = field(default_factory=list)
    reference: dict[str, float] | None = None  # reference values, percent
    deltas: dict[str, float] | None = None     # ours minus reference, percent points

    def values(self) -> list[float]:
        return [v for v in (self.auc_source, self.auc_target, self.pauc)
                if v is not None]


@dataclass
class MetricsReport:
    rows: list[SectionMetrics]
    omega: float | None
    omega_zero_flag: bool
    incomplete: bool
    pauc_p: float
    macs_per_vector: int | None = None


def build_report(scored: ScoredTestSet, model_macs: int | None = None,
                 reference: dict[str, dict[str, float]] | None = None,
                 p: float = DEFAULT_PAUC_P) -> MetricsReport:
    """Per-section metric rows plus the overall harmonic-mean score.

    Sections whose metrics are undefined stay in the report with blank cells
    and mark it incomplete; an incomplete report has no overall score.
    ``reference`` maps machine type to percent-valued
    {auc_source, auc_target, pauc} rows for side-by-side comparison.
    """
    rows = []
    incomplete = False
    for machine, section in scored.sections():
        metric_values = {}
        errors = []
        for name, fn in (("auc_source", lambda: auc_domain(scored, machine, section, "source")),
                         ("auc_target", lambda: auc_domain(scored, machine, section, "target")),
                         ("pauc", lambda: pauc_section(scored, machine, section, p))):
            try:
                metric_values[name] = fn()
            except UndefinedMetricError as exc:
                metric_values[name] = None
                errors.append(str(exc))
                incomplete = True
        row = SectionMetrics(machine_type=machine, section=section,
                             auc_source=metric_values["auc_source"],
                             auc_target=metric_values["auc_target"],
                             pauc=metric_values["pauc"], errors=errors)
        if reference and machine in reference:
            ref = reference[machine]
            row.reference = dict(ref)
            row.deltas = {key: 100.0 * metric_values[key] - ref[key]
                          for key in ("auc_source", "auc_target", "pauc")
                          if metric_values.get(key) is not None and key in ref}
        rows.append(row)
    if not rows:
        incomplete = True
    all_values = [v for row in rows for v in row.values()]
    if incomplete or not all_values:
        omega, zero_flag = None, False
    else:
        omega, zero_flag = official_score(all_values)
    return MetricsReport(rows=rows, omega=omega, omega_zero_flag=zero_flag,
                         incomplete=incomplete, pauc_p=p, macs_per_vector=model_macs)


def load_reference_csv(path) -> dict[str, dict[str, float]]:
    """Reference table: columns machine,auc_source,auc_target,pauc (percent)."""
    reference = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"machine", "auc_source", "auc_target", "pauc"}
        if not needed <= set(reader.fieldnames or []):
            raise UndefinedMetricError(
                f"{path}: reference CSV needs columns {sorted(needed)}")
        for row in reader:
            reference[row["machine"]] = {
                "auc_source": float(row["auc_source"]),
                "auc_target": float(row["auc_target"]),
                "pauc": float(row["pauc"])}
    return reference


def _pct(value: float | None) -> str:
    return "" if value is None else f"{100.0 * value:.2f}"


def write_report_csv(report: MetricsReport, path) -> None:
    has_ref = any(row.deltas for row in report.rows)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["machine_type", "section", "auc_source", "auc_target", "pauc"]
        if has_ref:
            for key in ("auc_source", "auc_target", "pauc"):
                header += [f"ref_{key}", f"delta_{key}"]
        writer.writerow(header)
        for row in report.rows:
            cells = [row.machine_type, row.section,
                     "" if row.auc_source is None else repr(row.auc_source),
                     "" if row.auc_target is None else repr(row.auc_target),
                     "" if row.pauc is None else repr(row.pauc)]
            if has_ref:
                for key, ours in (("auc_source", row.auc_source),
                                  ("auc_target", row.auc_target),
                                  ("pauc", row.pauc)):
                    ref = (row.reference or {}).get(key)
                    delta = (row.deltas or {}).get(key)
                    cells += ["" if ref is None else f"{ref:.2f}",
                              "" if delta is None else f"{delta:+.2f}"]
            writer.writerow(cells)
    os.replace(tmp, str(path))


def render_report(report: MetricsReport) -> str:
    """Human-readable table; metric columns in percent with 2 decimals."""
    lines = []
    header = f"{'machine':<16} {'section':<8} {'AUC src[%]':>10} {'AUC tgt[%]':>10} {'pAUC[%]':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report.rows:
        lines.append(f"{row.machine_type:<16} {row.section:<8} "
                     f"{_pct(row.auc_source):>10} {_pct(row.auc_target):>10} "
                     f"{_pct(row.pauc):>8}")
        if row.deltas:
            delta_text = ", ".join(f"{k} {v:+.2f}pp" for k, v in sorted(row.deltas.items()))
            lines.append(f"{'':<16} vs reference: {delta_text}")
        for err in row.errors:
            lines.append(f"{'':<16} ! {err}")
    lines.append("-" * len(header))
    if report.omega is None:
        lines.append("official score: n/a (incomplete report)")
    elif report.omega_zero_flag:
        lines.append("official score: 0.000000 (zero-valued constituent metrics)")
    else:
        lines.append(f"official score: {report.omega:.6f}")
    if report.macs_per_vector is not None:
        lines.append(f"MACs per input vector: {report.macs_per_vector}")
    if report.incomplete:
        lines.append("REPORT INCOMPLETE: some metrics were undefined")
    return "\n".join(lines) + "\n"
