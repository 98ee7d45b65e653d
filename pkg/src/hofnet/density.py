"""Particle-density evaluation: observed vs. propagated per-block mass.

The observed series counts particles per block at each step (mass that has
left the domain or passed its sequence end sits in the exit column, so total
mass is conserved).  A network's estimate starts from the same step-0 vector
and is rolled forward through the network.  The reported error is the
Kullback-Leibler divergence per step, divided by the particle count.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import density_series
from .propagation import estimate_series, kld_per_step


@dataclass
class DensityReport:
    kind: str
    order: int
    nodes: int
    particles: int
    horizon: int
    start_mode: str
    per_step: list[float] = field(default_factory=list)
    total: float = 0.0
    mean_step: float = 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order, "nodes": self.nodes,
                "particles": self.particles, "horizon": self.horizon,
                "start_mode": self.start_mode, "per_step": self.per_step,
                "total": self.total, "mean_step": self.mean_step}


def density_error(network, seqs, horizon: int, eps: float = 1e-8,
                  start_mode: str = "approximate") -> DensityReport:
    observed = density_series(seqs, network.block_count, horizon)
    estimated = estimate_series(network, observed[0], horizon, start_mode)
    per_step = kld_per_step(observed, estimated, eps, normalize=True)
    return DensityReport(kind=network.kind, order=network.order,
                         nodes=network.node_count, particles=len(seqs),
                         horizon=horizon, start_mode=start_mode,
                         per_step=[float(v) for v in per_step],
                         total=float(per_step.sum()),
                         mean_step=float(per_step.mean()))


def save_report(report: DensityReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path: str) -> DensityReport:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return DensityReport(**d)


CSV_FIELDS = ("kind", "order", "nodes", "particles", "total", "mean_step")


def append_csv(report: DensityReport, path: str) -> None:
    """Append one summary row per evaluated network to a shared CSV."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(CSV_FIELDS + tuple(f"step_{t}" for t in range(1, report.horizon + 1)))
        w.writerow([report.kind, report.order, report.nodes, report.particles,
                    f"{report.total:.10g}", f"{report.mean_step:.10g}"]
                   + [f"{v:.10g}" for v in report.per_step])
