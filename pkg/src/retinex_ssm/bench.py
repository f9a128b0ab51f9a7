"""Timing and agreement of the sequential and parallel S6 kernels."""

from __future__ import annotations

import csv
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .autodiff import Tensor
from .layers import ParamFactory
from .scan import KERNELS
from .ss2d import S6Params, s6_forward

SCAN_TOL = 1e-5
CSV_COLUMNS = ("kernel", "L", "d_state", "threads", "ns_per_token", "max_abs_diff")


@contextmanager
def single_lane():
    """Pin BLAS / OpenMP pools to one thread so reductions run in a fixed order."""
    with threadpool_limits(limits=1):
        yield


def active_threads() -> int:
    counts = [pool.get("num_threads", 1) for pool in threadpool_info()]
    return max(counts, default=1)


@dataclass
class BenchRow:
    kernel: str
    length: int
    d_state: int
    threads: int
    ns_per_token: float
    max_abs_diff: float

    def as_csv(self) -> list:
        return [self.kernel, self.length, self.d_state, self.threads, f"{self.ns_per_token:.1f}", f"{self.max_abs_diff:.3e}"]


def scan_trial(length: int, d_state: int, seed: int, channels: int = 4) -> tuple[np.ndarray, np.ndarray, dict]:
    """Run both kernels on one seeded (1, channels, length) sequence.

    Returns the sequential output, the parallel output and the wall time per
    kernel in seconds.
    """
    rng = np.random.default_rng([seed, length, d_state])
    params = S6Params.build(ParamFactory(rng), channels, d_state)
    seq = Tensor(rng.standard_normal((1, channels, length)).astype(np.float32))
    outs, times = {}, {}
    for kernel in KERNELS:
        start = time.perf_counter()
        outs[kernel] = s6_forward(seq, params, kernel).data
        times[kernel] = time.perf_counter() - start
    return outs["sequential"], outs["parallel"], times


def bench_scan(length: int, d_state: int, trials: int, seed: int = 0) -> list[BenchRow]:
    rows = []
    threads = active_threads()
    for trial in range(trials):
        seq_out, par_out, times = scan_trial(length, d_state, seed + trial)
        diff = float(np.max(np.abs(seq_out - par_out)))
        for kernel in KERNELS:
            rows.append(BenchRow(kernel, length, d_state, threads, 1e9 * times[kernel] / length, diff))
    return rows


def write_bench_csv(rows: list[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())
