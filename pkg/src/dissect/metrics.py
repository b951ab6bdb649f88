"""Working-index metrics, level-cut profiles and run reports.

The normalised working index of a worker is the fraction of the phase span
it spends computing: omega = (sum of busy interval lengths) / span, with the
span taken from the first Assign to the last Result of the phase so the
indices of all workers are measured against the same window. Plotted in
decreasing order the omegas form the step function used to judge load
balance; the headline statistics are their mean and the fraction of workers
above 0.9.

The static counterpart: cutting a full tree with N leaves at level
L = ceil(log8 N) - 1 yields 8^L independent subtrees, and the number of
active processes then decays by a factor of 8 per level toward the root.
``level_cut_profile`` returns that theoretical activity profile; it is the
baseline the dynamic scheduler is compared against.
"""

import csv
import json
from dataclasses import dataclass

from .errors import InvalidArgumentError, InvalidTraceError

__all__ = [
    "WorkingIndexReport",
    "MetricsDocument",
    "working_index",
    "level_cut_profile",
    "phase_report",
    "report",
    "write_omega_csv",
    "write_summary_json",
    "write_trace_csv",
    "read_trace_csv",
    "report_from_intervals",
]


def working_index(trace, span):
    """omega = busy time / span for one worker.

    ``trace`` is a WorkerTrace or a plain list of (start, end, ...) tuples
    whose intervals must lie within [0, span] and must not overlap.
    """
    if span <= 0:
        raise InvalidArgumentError("span must be positive")
    intervals = getattr(trace, "intervals", trace)
    ordered = sorted((iv[0], iv[1]) for iv in intervals)
    busy = 0
    prev_end = None
    for start, end in ordered:
        if end <= start:
            raise InvalidTraceError(f"empty or inverted interval ({start}, {end})")
        if start < 0 or end > span:
            raise InvalidTraceError(
                f"interval ({start}, {end}) outside the span [0, {span}]"
            )
        if prev_end is not None and start < prev_end:
            raise InvalidTraceError(
                f"overlapping intervals at t={start} (previous ends {prev_end})"
            )
        busy += end - start
        prev_end = end
    return busy / span


def level_cut_profile(n_leaves, branching=8):
    """Cut level L and the per-level active-process counts [b^L, ..., 1]."""
    if n_leaves < 1:
        raise InvalidArgumentError("leaf count must be >= 1")
    level = 0
    while branching**level < n_leaves:
        level += 1
    level = max(level - 1, 0)
    return level, [branching**k for k in range(level, -1, -1)]


@dataclass
class WorkingIndexReport:
    phase: str
    omegas: list  # descending
    worker_ids: list  # aligned with omegas
    mean_omega: float
    min_omega: float
    frac_above_0_9: float
    span: int
    busy_total: int
    per_level_counts: list


@dataclass
class MetricsDocument:
    phase_reports: dict
    t_seq: int
    t_par: int
    speedup: float
    efficiency: float
    n_workers: int
    n_traders: int


def _intervals_by_worker(intervals, n_workers, phase):
    out = {w: [] for w in range(n_workers)}
    for worker, start, end, task, ph in intervals:
        if phase == "full" or ph == phase:
            out[worker].append((start, end, task))
    return out


def phase_report(result, phase="up", tree=None):
    """WorkingIndexReport for one phase of a RunResult."""
    t0, t1 = result.span(phase)
    span = max(t1 - t0, 1)
    per_worker = _intervals_by_worker(result.intervals, result.n_workers, phase)
    pairs = []
    busy_total = 0
    for w in range(result.n_workers):
        shifted = [(s - t0, e - t0) for (s, e, _) in per_worker[w]]
        omega = working_index(shifted, span)
        busy_total += sum(e - s for (s, e) in shifted)
        pairs.append((omega, w))
    pairs.sort(key=lambda p: (-p[0], p[1]))
    omegas = [p[0] for p in pairs]
    per_level = []
    if tree is not None:
        depth = tree.depth
        per_level = [0] * (depth + 1)
        for n in tree.nodes:
            per_level[n.depth] += 1
    return WorkingIndexReport(
        phase=phase,
        omegas=omegas,
        worker_ids=[p[1] for p in pairs],
        mean_omega=sum(omegas) / len(omegas),
        min_omega=min(omegas),
        frac_above_0_9=sum(1 for o in omegas if o > 0.9) / len(omegas),
        span=span,
        busy_total=busy_total,
        per_level_counts=per_level,
    )


def report(result, tree=None, t_seq=None):
    """Aggregate metrics for a run: per-phase omegas, speedup, efficiency.

    ``t_seq`` defaults to the total simulated compute time (the exact cost a
    single processor would pay), so speedup = t_seq / t_par can never exceed
    the worker count. Pass a measured sequential time to override.
    """
    phases = list(result.phases)
    reports = {ph: phase_report(result, ph, tree) for ph in phases}
    if len(phases) > 1:
        reports["full"] = phase_report(result, "full", tree)
    if t_seq is None:
        t_seq = sum(result.durations.values())
    lo, hi = result.span("full" if len(phases) > 1 else phases[0])
    t_par = max(hi - lo, 1)
    speedup = t_seq / t_par
    return MetricsDocument(
        phase_reports=reports,
        t_seq=t_seq,
        t_par=t_par,
        speedup=speedup,
        efficiency=speedup / result.n_workers,
        n_workers=result.n_workers,
        n_traders=result.n_traders,
    )


# ---------------------------------------------------------------------------
# file emission
# ---------------------------------------------------------------------------


def write_omega_csv(wreport, path):
    """Descending step function: worker_id, omega."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "omega"])
        for w, omega in zip(wreport.worker_ids, wreport.omegas):
            writer.writerow([w, repr(omega)])


def write_summary_json(doc, path, phase="up"):
    wrep = doc.phase_reports[phase]
    payload = {
        "mean_omega": wrep.mean_omega,
        "frac_above_0.9": wrep.frac_above_0_9,
        "speedup": doc.speedup,
        "efficiency": doc.efficiency,
        "n_workers": doc.n_workers,
        "n_traders": doc.n_traders,
        "phase": phase,
        "min_omega": wrep.min_omega,
        "span": wrep.span,
        "t_seq": doc.t_seq,
        "t_par": doc.t_par,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    return payload


def write_trace_csv(result, path, phase="up"):
    """Busy intervals of one phase: worker_id, task_id, start, end."""
    rows = sorted(
        (w, task, start, end)
        for (w, start, end, task, ph) in result.intervals
        if ph == phase
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "task_id", "start", "end"])
        for w, task, start, end in rows:
            writer.writerow([w, task, start, end])
    return len(rows)


def read_trace_csv(path):
    """Rows of a trace CSV as (worker_id, task_id, start, end) ints."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                (
                    int(rec["worker_id"]),
                    int(rec["task_id"]),
                    int(rec["start"]),
                    int(rec["end"]),
                )
            )
    return rows


def report_from_intervals(rows, n_workers=None, n_traders=0, t_seq=None):
    """Build a metrics document from bare trace rows (one phase).

    The span is taken as [min start, max end] since Assign/Result times are
    not part of the trace file format.
    """
    if not rows:
        raise InvalidArgumentError("no trace rows to report on")
    if n_workers is None:
        n_workers = max(r[0] for r in rows) + 1
    t0 = min(r[2] for r in rows)
    t1 = max(r[3] for r in rows)
    intervals = [(w, s, e, task, "up") for (w, task, s, e) in rows]

    class _Shim:
        pass

    shim = _Shim()
    shim.intervals = intervals
    shim.n_workers = n_workers
    shim.n_traders = n_traders
    shim.phases = ("up",)
    shim.durations = {("up", task): e - s for (w, task, s, e) in rows}
    shim.span = lambda phase: (t0, t1)
    return report(shim, tree=None, t_seq=t_seq)
