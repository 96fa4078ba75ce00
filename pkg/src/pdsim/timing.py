"""Latency and throughput models for cloud-assisted on-device inference.

All durations are milliseconds (float); token counts are nonnegative
integers. Everything here is a pure function over immutable inputs, shared
by the planner, the simulators and the experiment harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

# cost of building + compressing the selection mask, given (prompt tokens, ratio)
CompressCost = Callable[[int, float], float]
# cost keyed on prompt tokens only (decompression, overhead bound)
TokenCost = Callable[[int], float]


class AmortizationUndefined(ValueError):
    """Smoothed TPOT needs at least one decode token to amortize over."""


@dataclass(frozen=True)
class RttClass:
    """Coarse network class: mean round trip plus a jitter spread."""

    name: str
    mean_ms: float
    jitter_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.mean_ms < 0.0 or self.jitter_ms < 0.0:
            raise ValueError("RTT mean and jitter must be nonnegative")

    @property
    def p95_ms(self) -> float:
        # normal approximation; only used as a conservative planning bound
        return self.mean_ms + 1.645 * self.jitter_ms

    def sample(self, rng) -> float:
        """Draw one RTT sample, truncated at zero."""
        if self.jitter_ms == 0.0:
            return self.mean_ms
        return max(0.0, rng.gauss(self.mean_ms, self.jitter_ms))


RTT_CLASSES: dict[str, RttClass] = {
    "wifi": RttClass("wifi", mean_ms=50.0, jitter_ms=10.0),
    "lte": RttClass("lte", mean_ms=100.0, jitter_ms=30.0),
}


def affine_cost(base_ms: float, per_token_ms: float) -> TokenCost:
    """Linear cost in the token count; the default shape for codec latencies."""

    def cost(tokens: int) -> float:
        return base_ms + per_token_ms * tokens

    return cost


@dataclass(frozen=True)
class TimingModel:
    """Calibrated per-token coefficients for one device class + network class.

    ``compress_cost`` covers mask build + compression on the cloud side,
    ``decompress_cost`` the device-side recovery, and ``overhead_bound`` must
    dominate compress + decompress + mean RTT for every supported prompt
    length (checked by :meth:`check_overhead_bound`).
    """

    k_cloud: float            # cloud prefill, ms per prompt token
    k_device: float           # device prefill, ms per prompt token
    tpot_cloud: float         # cloud time per output token, ms
    tpot_device: float        # device time per output token, ms
    rtt_class: RttClass
    compress_cost: CompressCost
    decompress_cost: TokenCost
    overhead_bound: TokenCost

    def __post_init__(self) -> None:
        for name in ("k_cloud", "k_device", "tpot_cloud", "tpot_device"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.k_device <= self.k_cloud:
            raise ValueError("device prefill must be slower than cloud (k_device > k_cloud)")

    def check_overhead_bound(
        self,
        lengths: Iterable[int],
        ratios: Sequence[float] = (0.05, 0.25, 0.5, 0.75, 1.0),
    ) -> None:
        """Verify overhead_bound(l) >= compress(l, r) + decompress(l) + mean RTT."""
        for l in lengths:
            bound = self.overhead_bound(l)
            for r in ratios:
                need = self.compress_cost(l, r) + self.decompress_cost(l) + self.rtt_class.mean_ms
                if bound < need - 1e-9:
                    raise ValueError(
                        f"overhead_bound({l}) = {bound:.3f} ms does not cover "
                        f"compress+decompress+RTT = {need:.3f} ms at ratio {r}"
                    )


def build_model(
    *,
    k_cloud: float = 0.1,
    k_device: float = 1.25,
    tpot_cloud: float = 30.0,
    tpot_device: float = 30.0,
    rtt: RttClass | str = "wifi",
    compress: CompressCost | None = None,
    decompress: TokenCost | None = None,
    overhead_bound: TokenCost | None = None,
) -> TimingModel:
    """Assemble a TimingModel with calibrated defaults.

    Defaults put an 8k-token prompt at 800 ms cloud prefill, 10 s device
    prefill, ~100 ms mask compression and ~50 ms recovery. The default
    overhead bound is compress + decompress + the 95th-percentile RTT of the
    class, deliberately conservative.
    """
    rtt_class = RTT_CLASSES[rtt] if isinstance(rtt, str) else rtt
    if compress is None:
        base = affine_cost(20.0, 0.01)
        compress = lambda tokens, ratio: base(tokens)  # noqa: E731 - latency dominated by length
    if decompress is None:
        decompress = affine_cost(10.0, 0.005)
    if overhead_bound is None:
        comp, deco, p95 = compress, decompress, rtt_class.p95_ms
        overhead_bound = lambda tokens: comp(tokens, 1.0) + deco(tokens) + p95  # noqa: E731
    return TimingModel(
        k_cloud=k_cloud,
        k_device=k_device,
        tpot_cloud=tpot_cloud,
        tpot_device=tpot_device,
        rtt_class=rtt_class,
        compress_cost=compress,
        decompress_cost=decompress,
        overhead_bound=overhead_bound,
    )


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-request latency components for one (prompt length, ratio, RTT) point."""

    prefill_cloud_ms: float
    compress_ms: float
    rtt_ms: float
    decompress_ms: float
    prefill_device_ms: float

    def __post_init__(self) -> None:
        for name in ("prefill_cloud_ms", "compress_ms", "rtt_ms", "decompress_ms", "prefill_device_ms"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def ttft_cloud_ms(self) -> float:
        return self.prefill_cloud_ms + self.compress_ms + self.rtt_ms

    @property
    def ttft_device_ms(self) -> float:
        return self.ttft_cloud_ms + self.decompress_ms + self.prefill_device_ms


def latency_breakdown(model: TimingModel, prompt_tokens: int, ratio: float, rtt_ms: float) -> LatencyBreakdown:
    _check_domain(prompt_tokens, ratio, rtt_ms)
    return LatencyBreakdown(
        prefill_cloud_ms=model.k_cloud * prompt_tokens,
        compress_ms=model.compress_cost(prompt_tokens, ratio),
        rtt_ms=rtt_ms,
        decompress_ms=model.decompress_cost(prompt_tokens),
        prefill_device_ms=model.k_device * ratio * prompt_tokens,
    )


def _check_domain(prompt_tokens: int, ratio: float, rtt_ms: float) -> None:
    if prompt_tokens <= 0:
        raise ValueError(f"prompt_tokens must be positive, got {prompt_tokens}")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if rtt_ms < 0.0:
        raise ValueError(f"rtt_ms must be nonnegative, got {rtt_ms}")


def prefill_device(model: TimingModel, tokens: int) -> float:
    """Device prefill latency over ``tokens`` prompt tokens."""
    if tokens < 0:
        raise ValueError(f"tokens must be nonnegative, got {tokens}")
    return model.k_device * tokens


def ttft_cloud(model: TimingModel, prompt_tokens: int, ratio: float, rtt_ms: float) -> float:
    """Time until the device holds the first token: cloud prefill + mask compression + RTT."""
    _check_domain(prompt_tokens, ratio, rtt_ms)
    return model.k_cloud * prompt_tokens + model.compress_cost(prompt_tokens, ratio) + rtt_ms


def ttft_device(model: TimingModel, prompt_tokens: int, ratio: float, ttft_cloud_ms: float) -> float:
    """On-device TTFT: cloud feedback, mask recovery, then prefill of the refined prompt."""
    _check_domain(prompt_tokens, ratio, 0.0)
    if ttft_cloud_ms < 0.0:
        raise ValueError(f"ttft_cloud_ms must be nonnegative, got {ttft_cloud_ms}")
    return ttft_cloud_ms + model.decompress_cost(prompt_tokens) + model.k_device * ratio * prompt_tokens


def smoothed_tpot(model: TimingModel, prefill_device_ms: float, ttft_cloud_ms: float, total_tokens: int) -> float:
    """Display pace that spreads the device prefill surplus over the assisted decode tokens.

    ``total_tokens`` counts the first token plus the decode tokens, so at
    least 2 are required; callers with a single assisted token must take the
    no-display-branch path in the device simulator.
    """
    if total_tokens < 2:
        raise AmortizationUndefined(f"need at least 2 assisted tokens, got {total_tokens}")
    if prefill_device_ms < 0.0 or ttft_cloud_ms < 0.0:
        raise ValueError("latencies must be nonnegative")
    return model.tpot_device + (prefill_device_ms - ttft_cloud_ms) / (total_tokens - 1)


def amortization_residual(
    model: TimingModel,
    prefill_device_ms: float,
    ttft_cloud_ms: float,
    total_tokens: int,
    tpot_smooth_ms: float,
) -> float:
    """Gap between device-paced and smoothed-display completion of the assisted window.

    Exactly zero when ``tpot_smooth_ms`` came from :func:`smoothed_tpot`.
    """
    if total_tokens < 2:
        raise AmortizationUndefined(f"need at least 2 assisted tokens, got {total_tokens}")
    steps = total_tokens - 1
    return (prefill_device_ms + model.tpot_device * steps) - (ttft_cloud_ms + tpot_smooth_ms * steps)


def request_occupancy(ttft_ms: float, tpot_ms: float, total_tokens: int) -> float:
    """Wall-clock a serving slot is held: TTFT plus one TPOT per decode token."""
    if total_tokens < 1:
        raise ValueError(f"total_tokens must be >= 1, got {total_tokens}")
    return ttft_ms + tpot_ms * (total_tokens - 1)
