"""Regret and communication bookkeeping, plus the per-run CSV format.

Regret is stored as constant-gap blocks (a phase plays each support action
for a contiguous run of rounds), so a run of length T costs memory
proportional to the number of blocks, not T.  Dense per-round arrays are
materialised on request.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

CSV_HEADER = ("run_id", "seed", "model", "epsilon", "delta", "alpha", "d", "k", "T",
              "phase", "round", "cum_regret", "comm_cost", "comm_unit", "clip_rate")
PHASE_HEADER = ("run_id", "seed", "phase", "h", "pulls", "clients", "support", "width",
                "active", "start_round", "end_round", "comm_units")
DECIMATE_ABOVE = 100_000


@dataclass
class PhaseRecord:
    phase: int
    h: int
    pulls: int
    clients: int
    support: int
    width: float
    active: int
    start_round: int
    end_round: int
    comm_units: int = 0


@dataclass
class RunMetrics:
    """Regret and communication for one run.

    Rounds are 1-based; ``cumulative_regret[t - 1]`` is the regret after ``t`` rounds.
    """

    T: int
    comm_unit: str = "reals"
    comm_cost: int = 0
    clip_rate: float = 0.0
    phase_log: list[PhaseRecord] = field(default_factory=list)
    # (first round, count, gap) triples in play order
    blocks: list[tuple[int, int, float]] = field(default_factory=list)
    # (round, units) charged when each phase reports
    comm_events: list[tuple[int, int]] = field(default_factory=list)
    final_active: list[int] = field(default_factory=list)
    # whether the best action was in the active set at the start of every phase
    best_retained: bool = True

    def __post_init__(self):
        if self.comm_unit not in ("reals", "bits"):
            raise ValueError("comm_unit must be 'reals' or 'bits'")

    @property
    def rounds_played(self) -> int:
        return self.blocks[-1][0] + self.blocks[-1][1] - 1 if self.blocks else 0

    def record_block(self, count: int, gap: float) -> None:
        """Append ``count`` rounds that each incur regret ``gap``."""
        if count < 0:
            raise ValueError("count must be non-negative")
        if count == 0:
            return
        start = self.rounds_played + 1
        if start + count - 1 > self.T:
            raise ValueError(f"recording {count} rounds from round {start} exceeds T={self.T}")
        gap = max(0.0, float(gap))
        if self.blocks and self.blocks[-1][2] == gap and self.blocks[-1][0] + self.blocks[-1][1] == start:
            s, c, _ = self.blocks[-1]
            self.blocks[-1] = (s, c + count, gap)
        else:
            self.blocks.append((start, count, gap))

    def record_phase_comm(self, support: int, clients: int, units_per_coordinate: int = 1) -> int:
        """Charge ``units * support * clients``; returns the amount charged."""
        if support < 0 or clients < 0 or units_per_coordinate < 0:
            raise ValueError("communication inputs must be non-negative")
        amount = int(units_per_coordinate) * int(support) * int(clients)
        self.comm_cost += amount
        self.comm_events.append((max(1, self.rounds_played), amount))
        return amount

    def _block_arrays(self):
        starts = np.array([b[0] for b in self.blocks], dtype=np.int64)
        counts = np.array([b[1] for b in self.blocks], dtype=np.int64)
        gaps = np.array([b[2] for b in self.blocks], dtype=float)
        before = np.concatenate([[0.0], np.cumsum(counts * gaps)[:-1]])
        return starts, gaps, before

    def cumulative_at(self, rounds) -> np.ndarray:
        """Cumulative regret after each of ``rounds`` (1-based, at most rounds played)."""
        r = np.asarray(rounds, dtype=np.int64)
        if r.size and (r.min() < 1 or r.max() > self.rounds_played):
            raise ValueError("round out of range")
        starts, gaps, before = self._block_arrays()
        idx = np.searchsorted(starts, r, side="right") - 1
        return before[idx] + (r - starts[idx] + 1) * gaps[idx]

    def comm_at(self, rounds) -> np.ndarray:
        r = np.asarray(rounds, dtype=np.int64)
        if not self.comm_events:
            return np.zeros(r.shape, dtype=np.int64)
        at = np.array([e[0] for e in self.comm_events], dtype=np.int64)
        cum = np.cumsum([e[1] for e in self.comm_events])
        idx = np.searchsorted(at, r, side="right") - 1
        return np.where(idx >= 0, cum[np.maximum(idx, 0)], 0)

    @property
    def per_round_regret(self) -> np.ndarray:
        return np.repeat([b[2] for b in self.blocks], [b[1] for b in self.blocks]).astype(float)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.per_round_regret)

    @property
    def final_regret(self) -> float:
        return float(sum(c * g for _, c, g in self.blocks))

    def phase_of(self, rounds) -> np.ndarray:
        r = np.asarray(rounds, dtype=np.int64)
        if not self.phase_log:
            return np.zeros(r.shape, dtype=np.int64)
        starts = np.array([p.start_round for p in self.phase_log], dtype=np.int64)
        labels = np.array([p.phase for p in self.phase_log], dtype=np.int64)
        idx = np.searchsorted(starts, r, side="right") - 1
        return labels[np.maximum(idx, 0)]

    def sample_rounds(self, max_points: int | None = None) -> np.ndarray:
        """Rounds written to CSV: all of them up to the decimation threshold, else a
        regular grid plus every phase end and the final round."""
        n = self.rounds_played
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        limit = DECIMATE_ABOVE if max_points is None else max_points
        if n <= limit:
            return np.arange(1, n + 1, dtype=np.int64)
        step = math.ceil(n / limit)
        pts = set(range(step, n + 1, step))
        pts.update(p.end_round for p in self.phase_log if 1 <= p.end_round <= n)
        pts.add(n)
        return np.array(sorted(pts), dtype=np.int64)


def record_round(metrics: RunMetrics, action, theta_star, x_star) -> RunMetrics:
    """Append one round's regret ``<theta*, x*> - <theta*, x_t>``."""
    theta_star = np.asarray(theta_star, dtype=float)
    gap = float(theta_star @ np.asarray(x_star, dtype=float) - theta_star @ np.asarray(action, dtype=float))
    metrics.record_block(1, gap)
    return metrics


def record_phase_comm(metrics: RunMetrics, support: int, clients: int, units_per_coordinate: int = 1) -> RunMetrics:
    metrics.record_phase_comm(support, clients, units_per_coordinate)
    return metrics


@dataclass(frozen=True)
class RunInfo:
    """Identifying columns repeated on every CSV row of a run."""

    run_id: str
    seed: int
    model: str
    epsilon: float
    delta: float
    alpha: float
    d: int
    k: int
    T: int


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def metric_rows(info: RunInfo, metrics: RunMetrics, max_points: int | None = None) -> list[tuple]:
    rounds = metrics.sample_rounds(max_points)
    cum = metrics.cumulative_at(rounds)
    comm = metrics.comm_at(rounds)
    phases = metrics.phase_of(rounds)
    head = tuple(getattr(info, f.name) for f in fields(RunInfo))
    return [head + (int(p), int(r), float(c), int(cc), metrics.comm_unit, float(metrics.clip_rate))
            for p, r, c, cc in zip(phases, rounds, cum, comm)]


def metric_lines(info: RunInfo, metrics: RunMetrics, max_points: int | None = None) -> list[str]:
    """CSV lines (no header) identical to formatting :func:`metric_rows`, but much faster."""
    rounds = metrics.sample_rounds(max_points)
    cum = metrics.cumulative_at(rounds).tolist()
    comm = metrics.comm_at(rounds).tolist()
    phases = metrics.phase_of(rounds).tolist()
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow(
        [_fmt(getattr(info, f.name)) for f in fields(RunInfo)])
    prefix = buf.getvalue()
    tail = f"{metrics.comm_unit},{float(metrics.clip_rate)!r}\n"
    return [f"{prefix},{p},{r},{c!r},{cc},{tail}"
            for p, r, c, cc in zip(phases, rounds.tolist(), cum, comm)]


def phase_rows(info: RunInfo, metrics: RunMetrics) -> list[tuple]:
    return [(info.run_id, info.seed) + tuple(asdict(p).values()) for p in metrics.phase_log]


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(header, rows))


_INT_COLS = {"seed", "seeds", "d", "k", "T", "phase", "round", "comm_cost", "h", "pulls", "clients",
             "support", "active", "start_round", "end_round", "comm_units", "best_retained"}
_STR_COLS = {"run_id", "model", "comm_unit", "label", "algorithm"}


def read_csv(path) -> list[dict]:
    """Rows as dicts with ints, floats and strings restored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            typed = {}
            for key, value in row.items():
                if key in _STR_COLS:
                    typed[key] = value
                elif key in _INT_COLS:
                    typed[key] = int(value)
                else:
                    typed[key] = float(value)
            out.append(typed)
    return out
