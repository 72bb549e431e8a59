"""Replication runner and report containers.

Replications run in contiguous chunks on a thread pool. Each replication
writes into its own slot of preallocated arrays and all reductions happen
afterwards in replication order, so results do not depend on the thread
count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..chain import ProtocolParams, record_times, run_kernel
from . import estimators
from .streams import chunk_bounds, replication_rng


@dataclass
class ExperimentReport:
    """One estimator's output. ``se`` is ``std / sqrt(reps)`` for means."""

    estimator: str
    estimate: float
    se: float
    reps: int
    seed: int
    config: dict = field(default_factory=dict, repr=False)
    wall_clock: float | None = None

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_clock")
        return d


@dataclass
class ExperimentResult:
    """Reports plus a flat table destined for CSV."""

    kind: str
    seed: int
    reps: int
    config: dict
    reports: list[ExperimentReport] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)
    table: list[list] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def add(self, name: str, estimate: float, se: float = 0.0) -> ExperimentReport:
        rep = ExperimentReport(name, float(estimate), float(se), self.reps, self.seed, self.config, self.wall_clock)
        self.reports.append(rep)
        return rep

    def report(self, name: str) -> ExperimentReport:
        for r in self.reports:
            if r.estimator == name:
                return r
        raise KeyError(name)

    def estimate(self, name: str) -> float:
        return self.report(name).estimate

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "kind": self.kind,
            "seed": self.seed,
            "reps": self.reps,
            "config": self.config,
            "reports": [{k: v for k, v in r.to_dict(timing).items() if k != "config"} for r in self.reports],
            "extra": self.extra,
        }
        if timing:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(_jsonable(self.to_dict(timing)), indent=2, allow_nan=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.table:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()

    def write(self, csv_path: str | None = None, json_path: str | None = None, timing: bool = False) -> None:
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                fh.write(self.to_csv())
        if json_path:
            with open(json_path, "w") as fh:
                fh.write(self.to_json(timing))
                fh.write("\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return ";".join(_cell(x) for x in v)
    if v is None:
        return ""
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan
        return x if math.isfinite(x) else None
    return obj


def run_chunks(fn, reps: int, threads: int) -> None:
    """Call ``fn(lo, hi)`` over a partition of ``range(reps)``."""
    threads = max(1, int(threads))
    bounds = chunk_bounds(reps, threads * 4 if threads > 1 else 1)
    if threads == 1:
        for lo, hi in bounds:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, lo, hi) for lo, hi in bounds]:
            fut.result()


@dataclass
class SimulationBatch:
    """Recorded states of ``R`` replications at common times."""

    params: ProtocolParams
    seed: int
    times: np.ndarray
    volumes: np.ndarray  # (R, len(times))
    stakes: np.ndarray  # (R, len(times), K)

    @property
    def reps(self) -> int:
        return self.volumes.shape[0]

    def column(self, t: int) -> int:
        hits = np.nonzero(self.times == t)[0]
        if hits.size == 0:
            raise KeyError(f"time {t} was not recorded")
        return int(hits[0])


def simulate_replications(
    params: ProtocolParams,
    horizon: int,
    reps: int,
    seed: int,
    times=None,
    threads: int = 1,
) -> SimulationBatch:
    """``reps`` independent trajectories, replication ``r`` on stream ``(seed, r)``."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rec = record_times(horizon, horizon if horizon > 0 else 1) if times is None else np.asarray(sorted(set(int(t) for t in times)), dtype=np.int64)
    if rec.size == 0 or rec[0] < 0 or rec[-1] > horizon:
        raise ValueError("record times must lie in [0, horizon]")
    K = params.num_bidders
    vols = np.empty((reps, rec.size))
    stakes = np.empty((reps, rec.size, K))
    init = np.array(params.initial_stakes)
    N0, alpha = params.initial_volume, params.alpha

    def work(lo, hi):
        wins = np.zeros(K, dtype=np.int64)
        for r in range(lo, hi):
            s = init.copy()
            run_kernel(s, N0, alpha, int(horizon), rec, replication_rng(seed, r), vols[r], stakes[r], wins)

    run_chunks(work, reps, threads)
    return SimulationBatch(params, seed, rec, vols, stakes)


def run_monte_carlo(
    params: ProtocolParams,
    horizon: int,
    reps: int,
    seed: int,
    times=None,
    threads: int = 1,
    bins: int = 40,
    config: dict | None = None,
) -> tuple[ExperimentResult, SimulationBatch]:
    """Simulate and summarise volume, shares and voting powers.

    Estimators at each recorded ``t > 0``: ``mean_volume``,
    ``mean_scaled_volume`` (volume over ``((1+alpha) t)**(1/(1+alpha))``),
    and per bidder ``mean_share[k]`` and ``mean_power[k]``.
    """
    start = time.perf_counter()
    batch = simulate_replications(params, horizon, reps, seed, times, threads)
    res = ExperimentResult("simulate", seed, reps, config or {})
    a = params.alpha
    for j, t in enumerate(batch.times):
        t = int(t)
        vol = batch.volumes[:, j]
        res.add(f"mean_volume@{t}", *estimators.mean_se(vol))
        if t > 0:
            res.add(f"mean_scaled_volume@{t}", *estimators.mean_se(vol / ((1.0 + a) * t) ** (1.0 / (1.0 + a))))
        for k in range(params.num_bidders):
            s = batch.stakes[:, j, k]
            res.add(f"mean_share[{k}]@{t}", *estimators.mean_se(s / vol))
            res.add(f"mean_power[{k}]@{t}", *estimators.mean_se(s / vol ** (1.0 + a)))
    final = batch.volumes[:, -1]
    edges, counts = estimators.histogram(final, bins, lattice=params.initial_volume % 1.0)
    res.extra["histogram"] = {"edges": edges.tolist(), "counts": counts.tolist(), "unimodal": estimators.is_unimodal(counts)}
    res.columns = ["rep", "t", "volume", "stakes"]
    res.table = [
        [r, int(t), float(batch.volumes[r, j]), batch.stakes[r, j]]
        for r in range(batch.reps)
        for j, t in enumerate(batch.times)
    ]
    res.wall_clock = time.perf_counter() - start
    for rep in res.reports:
        rep.wall_clock = res.wall_clock
    return res, batch
