"""Offline decision of (refinement ratio, assisted-token budget) per scenario.

The objective is the lowest on-device TTFT subject to a per-scene quality
floor on the ratio and two budget constraints: the display pace of assisted
tokens must stay under the tolerable TPOT, and the cloud must finish its
stream before the device finishes prefill. The structure admits a closed
form (smallest feasible ratio, then smallest feasible budget), so no MILP
library is involved.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .timing import TimingModel, smoothed_tpot, ttft_cloud, ttft_device

# refinement is planned at one-percent granularity; a ratio of exactly zero
# would leave the device nothing to prefill from
_RATIO_FLOOR = 0.01


@dataclass(frozen=True)
class PlanConstraints:
    """Per-scene knobs: quality floor on the ratio and tolerable display TPOT."""

    min_ratio: float
    max_tpot_ms: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_ratio <= 1.0:
            raise ValueError(f"min_ratio must be in [0, 1], got {self.min_ratio}")
        if self.max_tpot_ms <= 0.0:
            raise ValueError(f"max_tpot_ms must be positive, got {self.max_tpot_ms}")


@dataclass(frozen=True)
class Plan:
    """One planned operating point. ``max_tokens`` counts the first token too."""

    ratio: float
    max_tokens: int
    feasible: bool
    achieved_tpot_smooth: float  # inf when max_tokens == 1 (nothing to pace)
    ttft_device_estimate: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must be in [0, 1], got {self.ratio}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True, order=True)
class PlanKey:
    scene: str
    device_class: str
    prompt_length_bucket: int


def r_bounds(model: TimingModel, constraints: PlanConstraints, prompt_tokens: int) -> tuple[float, float]:
    """Feasible ratio interval; may be empty (lo > hi).

    The upper bound is where the collaboration stops paying for itself: the
    cloud prefill plus per-token overhead, translated to the device's time
    scale, must be recovered by the prompt reduction.
    """
    if prompt_tokens <= 0:
        raise ValueError(f"prompt_tokens must be positive, got {prompt_tokens}")
    hi = 1.0 - (model.k_cloud + model.overhead_bound(prompt_tokens) / prompt_tokens) / model.k_device
    return constraints.min_ratio, hi


def l_bounds(
    model: TimingModel,
    constraints: PlanConstraints,
    prompt_tokens: int,
    ratio: float,
    ttft_cloud_ms: float,
    ttft_device_ms: float,
) -> tuple[int, int]:
    """Feasible assisted-token interval [lo, hi]; may be empty.

    The lower bound keeps the smoothed display pace under max_tpot_ms; the
    upper bound keeps the cloud stream inside the device prefill window.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if constraints.max_tpot_ms <= model.tpot_device:
        raise ValueError("max_tpot_ms must exceed the device TPOT")
    refined_prefill = model.k_device * ratio * prompt_tokens
    lo = 1 + math.ceil((refined_prefill - ttft_cloud_ms) / (constraints.max_tpot_ms - model.tpot_device))
    hi = 1 + math.floor((ttft_device_ms - ttft_cloud_ms) / model.tpot_cloud)
    return max(2, lo), hi


def solve_plan(
    model: TimingModel,
    constraints: PlanConstraints,
    prompt_tokens: int,
    rtt_ms: float | None = None,
    *,
    ratio: float | None = None,
) -> Plan:
    """Pick the operating point minimizing on-device TTFT.

    On-device TTFT grows with the ratio and does not depend on the budget,
    so the solution is the smallest feasible ratio followed by the smallest
    feasible budget (which also minimizes cloud occupancy). Passing ``ratio``
    pins it (sweep variants do this) and only the budget is solved.
    Infeasibility is encoded in the plan, never raised:

    - empty ratio interval -> refinement disabled (ratio 1), token-level
      assist still planned;
    - empty budget interval -> clamp to the occupancy cap (the hard bound)
      and record the resulting over-target pace.
    """
    rtt = model.rtt_class.mean_ms if rtt_ms is None else rtt_ms
    lo, hi = r_bounds(model, constraints, prompt_tokens)
    if ratio is None:
        ratio_ok = lo <= hi
        ratio = max(lo, _RATIO_FLOOR) if ratio_ok else 1.0
    else:
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"pinned ratio must be in (0, 1], got {ratio}")
        ratio_ok = lo <= ratio <= hi

    ttft_c = ttft_cloud(model, prompt_tokens, ratio, rtt)
    ttft_d = ttft_device(model, prompt_tokens, ratio, ttft_c)
    b_lo, b_hi = l_bounds(model, constraints, prompt_tokens, ratio, ttft_c, ttft_d)
    budget_ok = b_lo <= b_hi
    budget = b_lo if budget_ok else max(b_hi, 1)

    if budget >= 2:
        achieved = smoothed_tpot(model, model.k_device * ratio * prompt_tokens, ttft_c, budget)
    else:
        achieved = math.inf
    return Plan(
        ratio=ratio,
        max_tokens=budget,
        feasible=ratio_ok and budget_ok,
        achieved_tpot_smooth=achieved,
        ttft_device_estimate=ttft_d,
    )


def check_plan(
    model: TimingModel,
    constraints: PlanConstraints,
    prompt_tokens: int,
    ratio: float,
    max_tokens: int,
    rtt_ms: float | None = None,
) -> bool:
    """Re-check an operating point by direct substitution into both constraints."""
    rtt = model.rtt_class.mean_ms if rtt_ms is None else rtt_ms
    lo, hi = r_bounds(model, constraints, prompt_tokens)
    if not lo <= ratio <= hi:
        return False
    ttft_c = ttft_cloud(model, prompt_tokens, ratio, rtt)
    ttft_d = ttft_device(model, prompt_tokens, ratio, ttft_c)
    steps = max_tokens - 1
    if steps < 1:
        return False
    refined_prefill = model.k_device * ratio * prompt_tokens
    if refined_prefill - ttft_c > steps * (constraints.max_tpot_ms - model.tpot_device):
        return False
    return ttft_c + steps * model.tpot_cloud <= ttft_d


@dataclass(frozen=True)
class PlanTable:
    plans: dict[PlanKey, Plan]
    buckets: tuple[int, ...]

    def lookup(self, scene: str, device_class: str, prompt_tokens: int) -> Plan | None:
        """Plan for the nearest bucket at or above the prompt length.

        Lengths past the largest bucket fall back to it; unknown scene or
        device class yields None (a planning miss).
        """
        idx = bisect_left(self.buckets, prompt_tokens)
        bucket = self.buckets[min(idx, len(self.buckets) - 1)]
        return self.plans.get(PlanKey(scene, device_class, bucket))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["scene", "device_class", "bucket", "r", "L", "feasible", "achieved_tpot_smooth"])
            for key in sorted(self.plans):
                plan = self.plans[key]
                writer.writerow(
                    [
                        key.scene,
                        key.device_class,
                        key.prompt_length_bucket,
                        f"{plan.ratio:.6f}",
                        plan.max_tokens,
                        str(plan.feasible).lower(),
                        f"{plan.achieved_tpot_smooth:.6f}",
                    ]
                )


def build_plan_table(
    models: Mapping[str, TimingModel],
    constraints_by_scene: Mapping[str, PlanConstraints],
    buckets: Sequence[int],
) -> PlanTable:
    """Solve every <scene, device class, prompt-length bucket> combination."""
    if not buckets:
        raise ValueError("bucket list must be nonempty")
    ordered = tuple(buckets)
    if list(ordered) != sorted(set(ordered)):
        raise ValueError("buckets must be strictly increasing")
    plans: dict[PlanKey, Plan] = {}
    for scene, constraints in constraints_by_scene.items():
        for device_class, model in models.items():
            for bucket in ordered:
                plans[PlanKey(scene, device_class, bucket)] = solve_plan(model, constraints, bucket)
    return PlanTable(plans=plans, buckets=ordered)
