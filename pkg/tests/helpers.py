"""Shared test utilities: independent oracles and synthetic data builders."""

from __future__ import annotations

import random

import numpy as np

from pdsim.planner import PlanConstraints
from pdsim.refiner import SelectionMask, TokenizedPrompt
from pdsim.timing import RttClass, TimingModel, affine_cost, build_model, ttft_cloud, ttft_device


def brute_force_plan(model: TimingModel, constraints: PlanConstraints, prompt_tokens: int,
                     rtt_ms: float | None = None, max_budget: int = 4096):
    """Grid search over ratio (step 0.01) and budget, checking the raw
    inequalities by substitution. Returns (ratio, budget) or None.

    Deliberately independent of the closed form: the quality/efficiency
    check uses the un-reorganized inequality k_c*l + bound(l) + k_d*r*l <= k_d*l.
    """
    rtt = model.rtt_class.mean_ms if rtt_ms is None else rtt_ms
    budgets = np.arange(2, max_budget + 1)
    best = None
    for step in range(0, 101):
        ratio = step / 100.0
        if ratio == 0.0 or ratio < constraints.min_ratio:
            continue
        lhs = model.k_cloud * prompt_tokens + model.overhead_bound(prompt_tokens) + model.k_device * ratio * prompt_tokens
        if lhs > model.k_device * prompt_tokens:
            continue
        tc = ttft_cloud(model, prompt_tokens, ratio, rtt)
        td = ttft_device(model, prompt_tokens, ratio, tc)
        refined_prefill = model.k_device * ratio * prompt_tokens
        pace_ok = refined_prefill - tc <= (budgets - 1) * (constraints.max_tpot_ms - model.tpot_device)
        occupancy_ok = tc + (budgets - 1) * model.tpot_cloud <= td
        feasible = pace_ok & occupancy_ok
        if not feasible.any():
            continue
        budget = int(budgets[int(np.argmax(feasible))])
        candidate = (td, budget, ratio)
        if best is None or candidate < best:
            best = candidate
    if best is None:
        return None
    return best[2], best[1]


def random_planner_instance(rng: random.Random):
    """One randomized planner instance with the quality floor on the 0.01 grid."""
    k_cloud = rng.uniform(0.05, 0.3)
    k_device = rng.uniform(k_cloud + 0.3, 2.0)
    tpot_device = rng.uniform(15.0, 50.0)
    model = build_model(
        k_cloud=k_cloud,
        k_device=k_device,
        tpot_cloud=rng.uniform(15.0, 50.0),
        tpot_device=tpot_device,
        rtt=RttClass("rand", mean_ms=rng.uniform(10.0, 150.0), jitter_ms=0.0),
        compress=(lambda c: (lambda tokens, ratio: c(tokens)))(affine_cost(rng.uniform(0.0, 30.0), rng.uniform(0.005, 0.03))),
        decompress=affine_cost(rng.uniform(0.0, 15.0), rng.uniform(0.002, 0.015)),
    )
    constraints = PlanConstraints(
        min_ratio=rng.randint(1, 95) / 100.0,
        max_tpot_ms=tpot_device + rng.uniform(20.0, 120.0),
    )
    prompt_tokens = rng.choice([1000, 2000, 4000, 8000, 16000, 32000])
    return model, constraints, prompt_tokens


def clustered_mask(rng: random.Random, length: int, mean_run: float = 24.0) -> SelectionMask:
    """Sentence-like mask: alternating 0/1 runs with geometric lengths."""
    bits = []
    value = rng.randint(0, 1)
    while len(bits) < length:
        run = max(1, round(rng.expovariate(1.0 / mean_run)))
        bits.extend([value] * run)
        value = 1 - value
    return SelectionMask(bits[:length])


def synthetic_prompt(rng: random.Random, n_sentences: int, prefix_tokens: int = 3, suffix_tokens: int = 2,
                     sentence_len: tuple[int, int] = (3, 9)) -> TokenizedPrompt:
    """Small prompt with explicit sentence structure for selection tests."""
    prefix = " ".join(f"p{i}" for i in range(prefix_tokens))
    suffix = " ".join(f"s{i}" for i in range(suffix_tokens))
    sentences = []
    for s in range(n_sentences):
        words = rng.randint(*sentence_len)
        sentences.append(" ".join(f"c{s}x{w}" for w in range(words)) + ".")
    return TokenizedPrompt.from_text(prefix, " ".join(sentences), suffix)
