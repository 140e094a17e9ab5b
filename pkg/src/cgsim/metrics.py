"""Per-UE counters, aggregation across replications and file export."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .time_grid import SYMBOLS_PER_SLOT, Numerology

# Skipped-repetition reasons; each has its own counter.
SKIP_FIELDS = ("skipped_invalid", "lbt_blocks", "skipped_cancelled", "skipped_timer",
               "skipped_acked", "skipped_flushed", "skipped_not_transmitted")

COUNTER_FIELDS = (
    "offered", "delivered", "delivered_in_deadline",
    "reps_nominal", "reps_emitted") + SKIP_FIELDS + (
    "shared_tx", "collisions", "initial_bundles", "unknown_initial",
    "common_nack_sent", "common_nack_recovered", "first_period_hits", "reps_first_period",
    "dynamic_retx", "autonomous_retx", "aligned_packets",
)

PERCENTILES = ((50.0, "p50"), (95.0, "p95"), (99.0, "p99"), (99.9, "p99_9"), (99.999, "p99_999"))
FIVE_NINES_MIN_OFFERED = 10 ** 7

CSV_COLUMNS = (
    "replication", "ue_id", "offered", "delivered", "delivered_in_deadline",
    "reliability", "reliability_se", "five_nines_resolved", "latency_mean_us",
) + tuple(f"latency_{tag}_us" for _, tag in PERCENTILES) + (
    "reps_nominal", "reps_emitted", "reps_skipped") + SKIP_FIELDS + (
    "shared_tx", "collisions", "collision_rate", "initial_bundles", "unknown_initial",
    "common_nack_sent", "common_nack_recovered", "first_period_hits", "reps_first_period",
    "mean_alignment_delay_slots", "dynamic_retx", "autonomous_retx",
)


class UeCounters:
    """Mutable tallies for one UE in one replication."""

    __slots__ = COUNTER_FIELDS + ("alignment_sum", "alignment_sumsq", "latencies")

    def __init__(self):
        for f in COUNTER_FIELDS:
            setattr(self, f, 0)
        self.alignment_sum = 0.0
        self.alignment_sumsq = 0.0
        self.latencies: list = []       # symbols, delivered packets only

    @property
    def reps_skipped(self) -> int:
        return sum(getattr(self, f) for f in SKIP_FIELDS)

    def merge(self, other: "UeCounters") -> None:
        for f in COUNTER_FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))
        self.alignment_sum += other.alignment_sum
        self.alignment_sumsq += other.alignment_sumsq
        self.latencies.extend(other.latencies)


@dataclass
class UeResult:
    replication: int
    ue_id: int
    counters: UeCounters


def _ratio(a, b) -> Optional[float]:
    return a / b if b else None


def percentile_table(latencies_us, n: Optional[int] = None) -> dict:
    """Empirical percentiles; a level is left out when the sample is too small to resolve it."""
    arr = np.asarray(latencies_us, dtype=float)
    n = len(arr) if n is None else n
    out = {}
    for q, tag in PERCENTILES:
        if len(arr) and n >= 1.0 / (1.0 - q / 100.0) - 1e-9:
            out[tag] = float(np.percentile(arr, q, method="inverted_cdf"))
        else:
            out[tag] = None
    return out


def _se(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    if len(vals) < 2:
        return None
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, str)):
        return str(v)
    return f"{v:.10g}"


@dataclass
class MetricsReport:
    numerology: Numerology = field(default_factory=Numerology)
    results: list = field(default_factory=list)     # UeResult, replication-major order
    trace: list = field(default_factory=list)       # trace of replication 0 when enabled

    @property
    def symbol_us(self) -> float:
        return self.numerology.symbol_duration_us

    def replications(self) -> list:
        return sorted({r.replication for r in self.results})

    def ue_ids(self) -> list:
        return sorted({r.ue_id for r in self.results})

    def pooled(self, ue_id=None, replication=None) -> UeCounters:
        total = UeCounters()
        for r in self.results:
            if (ue_id is None or r.ue_id == ue_id) and (replication is None or r.replication == replication):
                total.merge(r.counters)
        return total

    # ---- derived metrics

    def row(self, c: UeCounters, rel_se=None) -> dict:
        us = self.symbol_us
        lat_us = [x * us for x in c.latencies]
        pct = percentile_table(lat_us)
        d = {f: getattr(c, f) for f in COUNTER_FIELDS}
        d.update(
            reliability=_ratio(c.delivered_in_deadline, c.offered),
            reliability_se=rel_se,
            five_nines_resolved=c.offered >= FIVE_NINES_MIN_OFFERED,
            latency_mean_us=(sum(lat_us) / len(lat_us)) if lat_us else None,
            reps_skipped=c.reps_skipped,
            collision_rate=_ratio(c.collisions, c.shared_tx),
            mean_alignment_delay_slots=(c.alignment_sum / c.aligned_packets / SYMBOLS_PER_SLOT
                                        if c.aligned_packets else None),
        )
        for _, tag in PERCENTILES:
            d[f"latency_{tag}_us"] = pct[tag]
        return d

    def rows(self) -> list:
        out = []
        for r in self.results:
            d = self.row(r.counters)
            d.update(replication=r.replication, ue_id=r.ue_id)
            out.append(d)
        for ue in self.ue_ids():
            per_rep = [self.row(r.counters) for r in self.results if r.ue_id == ue]
            d = self.row(self.pooled(ue_id=ue), _se([p["reliability"] for p in per_rep]))
            d.update(replication="all", ue_id=ue)
            out.append(d)
        return out

    def summary(self) -> dict:
        total = self.pooled()
        d = self.row(total)
        per_rep = [self.row(self.pooled(replication=r)) for r in self.replications()]
        se = {k: _se([p[k] for p in per_rep])
              for k in ("reliability", "latency_mean_us", "collision_rate",
                        "mean_alignment_delay_slots")}
        d = {k: d[k] for k in d}
        d["replications"] = len(per_rep)
        d["ues"] = len(self.ue_ids())
        d["standard_error"] = se
        if not d["five_nines_resolved"]:
            d["reliability_note"] = (f"under-sampled: {total.offered} packets offered, "
                                     f"{FIVE_NINES_MIN_OFFERED} needed to resolve 99.999 %")
        return d

    def latency_cdf(self) -> list:
        """``(latency_us, cumulative_fraction)`` over all offered packets."""
        c = self.pooled()
        if not c.latencies or not c.offered:
            return []
        lat = np.sort(np.asarray(c.latencies, dtype=float) * self.symbol_us)
        vals, counts = np.unique(lat, return_counts=True)
        cum = np.cumsum(counts) / c.offered
        return list(zip(vals.tolist(), cum.tolist()))

    # ---- export

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for d in self.rows():
            w.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def cdf_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("latency_us", "cumulative_fraction"))
        for x, y in self.latency_cdf():
            w.writerow((_fmt(x), _fmt(y)))
        return buf.getvalue()

    def export(self, out_dir) -> dict:
        """Write metrics.csv, summary.json and latency_cdf.csv; returns the paths."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json",
                     "latency_cdf": out / "latency_cdf.csv"}
            paths["metrics"].write_text(self.csv_text())
            paths["summary"].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
            paths["latency_cdf"].write_text(self.cdf_text())
        except OSError as e:
            raise OSError(f"cannot write results to {out}: {e}") from e
        return paths
