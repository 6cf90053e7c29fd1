"""Deterministic event engine and the two-link backlog experiment.

The experiment: two parallel links of 1 kb/s each; one content arrives
every second with a Pareto-distributed size (shape alpha, scale chosen
so the mean offered load is 2*rho kb/s against 2 kb/s of capacity), and
is assigned to a link by one of two policies.  Policy 1 knows nothing
about sizes: it takes an empty link when there is one, otherwise picks
at random.  Policy 2 knows sizes implicitly through backlogs: it always
takes the link with the smaller backlog.  The figure of merit is the
time-averaged total backlog; the gain is the relative reduction policy
2 achieves over policy 1 on the identical arrival sequence.

Everything is seeded: same inputs, bit-identical outputs.
"""

from __future__ import annotations

import csv
import heapq
import math
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

LINK_CAPACITY_KBPS = 1.0  # per link; two links per the experiment
TOTAL_CAPACITY_KBPS = 2.0

# keeps policy-1's coin flips from consuming the size stream
_CHOICE_SEED_SALT = 0x9E3779B97F4A7C15

CSV_COLUMNS = (
    "alpha",
    "rho",
    "seed",
    "avg_backlog_p1_kb",
    "avg_backlog_p2_kb",
    "gain_pct",
)


class EventQueue:
    """Time-ordered queue; equal times pop in insertion order."""

    def __init__(self):
        self._heap: list[tuple[float, int, object]] = []
        self._seq = 0
        self.now = 0.0

    def push(self, time: float, event: object):
        if time < self.now:
            raise ValueError(f"event at {time} is before the clock ({self.now})")
        heapq.heappush(self._heap, (time, self._seq, event))
        self._seq += 1

    def pop(self) -> tuple[float, object]:
        time, _, event = heapq.heappop(self._heap)
        self.now = time
        return time, event

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


class FluidLinkQueue:
    """One link as a fluid queue: backlog drains at a constant rate."""

    def __init__(self, capacity_kbps: float = LINK_CAPACITY_KBPS):
        if capacity_kbps <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity_kbps = capacity_kbps
        self.backlog_kb = 0.0

    def add(self, kb: float):
        if kb < 0:
            raise ValueError("arrival must be >= 0")
        self.backlog_kb += kb

    def drain(self, seconds: float):
        self.backlog_kb = max(0.0, self.backlog_kb - self.capacity_kbps * seconds)

    def drain_and_integrate(self, seconds: float) -> float:
        """Drain for ``seconds`` and return the backlog integral (kb*s).

        Closed form of the linear decay: the backlog either stays
        positive for the whole interval or hits zero partway through.
        """
        b, c = self.backlog_kb, self.capacity_kbps
        if b >= c * seconds:
            integral = b * seconds - 0.5 * c * seconds * seconds
            self.backlog_kb = b - c * seconds
        else:
            integral = b * b / (2.0 * c)
            self.backlog_kb = 0.0
        return integral


def scale_for_load(alpha: float, rho: float) -> float:
    """Pareto scale x_m putting the mean size at 2*rho kb (load rho)."""
    if alpha <= 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    return TOTAL_CAPACITY_KBPS * rho * (alpha - 1.0) / alpha


def pareto_mean(alpha: float, x_m: float) -> float:
    return alpha * x_m / (alpha - 1.0)


def pareto_sample(rng: random.Random, alpha: float, x_m: float) -> float:
    """x_m * U^(-1/alpha) with U uniform on (0, 1]; always >= x_m."""
    u = 1.0 - rng.random()  # random() is [0, 1); shift to (0, 1]
    return x_m * u ** (-1.0 / alpha)


@dataclass(frozen=True)
class ParetoWorkload:
    alpha: float
    x_m: float
    seed: int

    def __post_init__(self):
        if self.alpha <= 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if self.x_m <= 0:
            raise ValueError(f"x_m must be > 0, got {self.x_m}")

    @property
    def mean(self) -> float:
        return pareto_mean(self.alpha, self.x_m)

    def samples(self, n: int) -> Iterable[float]:
        rng = random.Random(self.seed)
        for _ in range(n):
            yield pareto_sample(rng, self.alpha, self.x_m)


def policy1_assign(backlogs: Sequence[float], rng: random.Random) -> int:
    """Size-blind: take an empty link if any (both empty: the first),
    otherwise pick one of the two at random."""
    b0, b1 = backlogs
    empty0, empty1 = b0 <= 0.0, b1 <= 0.0
    if empty0:
        return 0  # covers both-empty by the documented tie rule
    if empty1:
        return 1
    return 0 if rng.random() < 0.5 else 1


def policy2_assign(backlogs: Sequence[float]) -> int:
    """Size-aware stand-in: the link with minimum backlog; tie -> first."""
    b0, b1 = backlogs
    return 1 if b1 < b0 else 0


def run_two_link_experiment(
    alpha: float, rho: float, horizon_seconds: int, seed: int, policy: int
) -> float:
    """Average total backlog (kb) over the horizon for one policy.

    One arrival at each integer second; each link drains at 1 kb/s.
    The size stream depends only on (alpha, rho, seed), so runs with
    policy 1 and policy 2 on the same seed see identical arrivals.
    """
    if horizon_seconds < 1:
        raise ValueError("horizon must be >= 1 second")
    if policy not in (1, 2):
        raise ValueError(f"policy must be 1 or 2, got {policy}")
    x_m = scale_for_load(alpha, rho)
    neg_inv_alpha = -1.0 / alpha
    draw = random.Random(seed).random
    flip = random.Random(seed ^ _CHOICE_SEED_SALT).random if policy == 1 else None

    # inlined per-second fluid update of both links (hot loop; the
    # FluidLinkQueue equivalence is pinned by a test)
    b0 = 0.0
    b1 = 0.0
    integral = 0.0
    for _ in range(horizon_seconds):
        size = x_m * (1.0 - draw()) ** neg_inv_alpha
        if policy == 2:
            if b1 < b0:
                b1 += size
            else:
                b0 += size
        else:
            if b0 <= 0.0:
                b0 += size
            elif b1 <= 0.0:
                b1 += size
            elif flip() < 0.5:
                b0 += size
            else:
                b1 += size
        # drain one second at 1 kb/s; integral of a linear decay
        if b0 >= 1.0:
            integral += b0 - 0.5
            b0 -= 1.0
        else:
            integral += b0 * b0 * 0.5
            b0 = 0.0
        if b1 >= 1.0:
            integral += b1 - 0.5
            b1 -= 1.0
        else:
            integral += b1 * b1 * 0.5
            b1 = 0.0
    return integral / horizon_seconds


def gain_pct(avg_backlog_p1: float, avg_backlog_p2: float) -> float:
    """Relative backlog reduction of policy 2 vs policy 1, in percent."""
    if avg_backlog_p1 == 0.0:
        return 0.0
    return 100.0 * (avg_backlog_p1 - avg_backlog_p2) / avg_backlog_p1


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    rho: float
    seed: int
    avg_backlog_p1_kb: float
    avg_backlog_p2_kb: float
    gain_pct: float


@dataclass(frozen=True)
class AlphaSummary:
    alpha: float
    rho: float
    mean_backlog_p1_kb: float
    mean_backlog_p2_kb: float
    mean_gain_pct: float
    max_gain_pct: float
    max_gain_seed: int


def run_cell(alpha: float, rho: float, horizon: int, seed: int) -> SweepCell:
    p1 = run_two_link_experiment(alpha, rho, horizon, seed, policy=1)
    p2 = run_two_link_experiment(alpha, rho, horizon, seed, policy=2)
    return SweepCell(
        alpha=alpha,
        rho=rho,
        seed=seed,
        avg_backlog_p1_kb=p1,
        avg_backlog_p2_kb=p2,
        gain_pct=gain_pct(p1, p2),
    )


def sweep_alpha(
    alphas: Sequence[float],
    rho: float,
    horizon: int,
    seeds: Sequence[int],
    progress: Callable[[SweepCell], None] | None = None,
) -> tuple[list[SweepCell], list[AlphaSummary]]:
    """Run every (alpha, seed) cell with coupled arrival streams."""
    if not seeds:
        raise ValueError("at least one seed is required")
    cells: list[SweepCell] = []
    summaries: list[AlphaSummary] = []
    for alpha in alphas:
        group: list[SweepCell] = []
        for seed in seeds:
            cell = run_cell(alpha, rho, horizon, seed)
            group.append(cell)
            if progress is not None:
                progress(cell)
        cells.extend(group)
        best = max(group, key=lambda c: c.gain_pct)
        summaries.append(
            AlphaSummary(
                alpha=alpha,
                rho=rho,
                mean_backlog_p1_kb=math.fsum(c.avg_backlog_p1_kb for c in group) / len(group),
                mean_backlog_p2_kb=math.fsum(c.avg_backlog_p2_kb for c in group) / len(group),
                mean_gain_pct=math.fsum(c.gain_pct for c in group) / len(group),
                max_gain_pct=best.gain_pct,
                max_gain_seed=best.seed,
            )
        )
    return cells, summaries


def alpha_range(alpha_min: float, alpha_max: float, alpha_step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded so 1.1 + k*0.1 prints cleanly."""
    if alpha_min <= 1:
        raise ValueError("alpha_min must be > 1")
    if alpha_step <= 0:
        raise ValueError("alpha_step must be > 0")
    if alpha_max < alpha_min:
        raise ValueError("alpha_max must be >= alpha_min")
    count = int(math.floor((alpha_max - alpha_min) / alpha_step + 1e-9)) + 1
    return [round(alpha_min + i * alpha_step, 10) for i in range(count)]


def write_sweep_csv(path, cells: Sequence[SweepCell], summaries: Sequence[AlphaSummary]):
    """Per-seed rows grouped by alpha, each group closed by summary rows.

    Summary rows reuse the schema with ``seed`` set to "mean" (per-seed
    means of every numeric column) and "max" (the row of the seed with
    the highest gain).
    """
    by_alpha: dict[float, list[SweepCell]] = {}
    for cell in cells:
        by_alpha.setdefault(cell.alpha, []).append(cell)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for summary in summaries:
            for cell in by_alpha.get(summary.alpha, []):
                writer.writerow(
                    [
                        repr(cell.alpha),
                        repr(cell.rho),
                        cell.seed,
                        repr(cell.avg_backlog_p1_kb),
                        repr(cell.avg_backlog_p2_kb),
                        repr(cell.gain_pct),
                    ]
                )
            writer.writerow(
                [
                    repr(summary.alpha),
                    repr(summary.rho),
                    "mean",
                    repr(summary.mean_backlog_p1_kb),
                    repr(summary.mean_backlog_p2_kb),
                    repr(summary.mean_gain_pct),
                ]
            )
            best = next(
                c for c in by_alpha.get(summary.alpha, []) if c.seed == summary.max_gain_seed
            )
            writer.writerow(
                [
                    repr(summary.alpha),
                    repr(summary.rho),
                    "max",
                    repr(best.avg_backlog_p1_kb),
                    repr(best.avg_backlog_p2_kb),
                    repr(summary.max_gain_pct),
                ]
            )


def read_sweep_csv(path) -> tuple[list[SweepCell], list[dict]]:
    """Parse a sweep CSV back into per-seed cells and summary dicts."""
    cells: list[SweepCell] = []
    summaries: list[dict] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns: {reader.fieldnames}")
        for row in reader:
            if row["seed"] in ("mean", "max"):
                summaries.append(
                    {
                        "alpha": float(row["alpha"]),
                        "rho": float(row["rho"]),
                        "kind": row["seed"],
                        "avg_backlog_p1_kb": float(row["avg_backlog_p1_kb"]),
                        "avg_backlog_p2_kb": float(row["avg_backlog_p2_kb"]),
                        "gain_pct": float(row["gain_pct"]),
                    }
                )
            else:
                cells.append(
                    SweepCell(
                        alpha=float(row["alpha"]),
                        rho=float(row["rho"]),
                        seed=int(row["seed"]),
                        avg_backlog_p1_kb=float(row["avg_backlog_p1_kb"]),
                        avg_backlog_p2_kb=float(row["avg_backlog_p2_kb"]),
                        gain_pct=float(row["gain_pct"]),
                    )
                )
    return cells, summaries
