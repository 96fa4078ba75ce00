"""Cloud-side request serving in simulated time.

Prefill and refinement are timed delays from the calibrated model rather
than modeled compute. Each request yields the piggyback first frame, a
periodic decode stream cut off at the assisted-token budget (or at EOT,
whichever comes first), and a slot-occupancy record that feeds the batch
throughput simulator.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eventloop import EventLoop
from .maskcodec import pack
from .planner import Plan, PlanTable
from .protocol import DONE, AssistRequest, DoneMarker, FirstTokenFrame, StreamEvent, encode_done, encode_first_frame, encode_stream_event
from .refiner import TokenScores, TokenizedPrompt, select_sentences
from .timing import TimingModel, request_occupancy, ttft_cloud

EOT_TOKEN = "<eot>"


@dataclass(frozen=True)
class TokenSource:
    """Seeded deterministic token stream; position ``total_tokens`` is the EOT label.

    Two sources with the same seed agree everywhere except at positions in
    ``divergence``, which model a paired device generating a different token.
    """

    seed: int
    total_tokens: int
    divergence: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.total_tokens < 1:
            raise ValueError("total_tokens must be >= 1")

    def token_at(self, position: int) -> str:
        if not 1 <= position <= self.total_tokens:
            raise ValueError(f"position {position} outside 1..{self.total_tokens}")
        if position == self.total_tokens:
            return EOT_TOKEN
        salt = "alt" if position in self.divergence else "tok"
        draw = random.Random(f"{self.seed}:{salt}:{position}").randrange(1 << 16)
        return f"{salt}{position}_{draw:04x}"


@dataclass(frozen=True)
class SessionRecord:
    """Slot accounting for one served request."""

    request_id: str
    plan: Plan | None
    prompt_tokens: int
    ratio: float
    max_tokens: int | None  # None = stream until EOT
    tokens_emitted: int
    ttft_cloud_ms: float
    occupancy_ms: float
    slot_released_at_ms: float
    mask_payload_bytes: int
    planning_miss: bool


@dataclass(frozen=True)
class CloudTrace:
    """Timed emissions of one session plus its slot record."""

    frame_time_ms: float
    frame: FirstTokenFrame
    events: tuple[tuple[float, StreamEvent], ...]
    done_time_ms: float
    record: SessionRecord
    rtt_ms: float

    def delivery(self) -> list[tuple[float, StreamEvent | DoneMarker]]:
        """Timed stream as the device sees it (events then the DONE marker)."""
        timed: list[tuple[float, StreamEvent | DoneMarker]] = list(self.events)
        timed.append((self.done_time_ms, DONE))
        return timed

    def wire_bytes(self) -> bytes:
        """Exact bytes of the whole response stream."""
        out = encode_first_frame(self.frame)
        for _, event in self.events:
            out += encode_stream_event(StreamEvent(event.index, event.token))
        return out + encode_done()


def uniform_scores(prompt: TokenizedPrompt, seed: int | str) -> TokenScores:
    """Synthetic stand-in for attention-derived scores, deterministic per seed."""
    rng = random.Random(f"scores:{seed}")
    return TokenScores(np.array([rng.random() for _ in prompt.content]))


def serve_request(
    req: AssistRequest,
    plan_table: PlanTable | None,
    model: TimingModel,
    source: TokenSource,
    *,
    start_ms: float = 0.0,
    rtt_ms: float | None = None,
    scorer: Callable[[TokenizedPrompt], TokenScores] | None = None,
    ratio_override: float | None = None,
    max_tokens_override: int | None = None,
    score_seed: int | str | None = None,
) -> CloudTrace:
    """Serve one request: refine, piggyback the first token, stream, terminate.

    A missing plan serves with ratio 1 and no budget (stream until EOT) and
    is flagged as a planning miss. Overrides pin the sweep variant's ratio
    or budget regardless of the plan.
    """
    prompt = TokenizedPrompt.from_text(req.prefix, req.content, req.suffix)
    plan = plan_table.lookup(req.scene, req.device_class, prompt.total_tokens) if plan_table else None
    miss = plan is None
    if ratio_override is not None:
        ratio = ratio_override
    else:
        ratio = 1.0 if miss else plan.ratio
    budget: int | None
    if max_tokens_override is not None:
        budget = max_tokens_override
    else:
        budget = None if miss else plan.max_tokens

    rtt = model.rtt_class.mean_ms if rtt_ms is None else rtt_ms
    first_token_at = start_ms + ttft_cloud(model, prompt.total_tokens, ratio, rtt)

    if ratio >= 1.0:
        scores = TokenScores(np.zeros(len(prompt.content)))
    elif scorer is not None:
        scores = scorer(prompt)
    else:
        seed = req.request_id if score_seed is None else f"{score_seed}:{req.request_id}"
        scores = uniform_scores(prompt, seed)
    mask = select_sentences(prompt, scores, ratio)
    compressed = pack(mask)

    emit_total = source.total_tokens if budget is None else min(budget, source.total_tokens)
    frame = FirstTokenFrame(
        token=source.token_at(1),
        mask=compressed,
        max_tokens=0 if budget is None else budget,
    )
    events = tuple(
        (
            first_token_at + i * model.tpot_cloud,
            StreamEvent(index=i, token=source.token_at(i + 1), terminal=(i == emit_total - 1)),
        )
        for i in range(1, emit_total)
    )
    done_time = events[-1][0] if events else first_token_at
    occupancy = request_occupancy(first_token_at - start_ms, model.tpot_cloud, emit_total)
    record = SessionRecord(
        request_id=req.request_id,
        plan=plan,
        prompt_tokens=prompt.total_tokens,
        ratio=ratio,
        max_tokens=budget,
        tokens_emitted=emit_total,
        ttft_cloud_ms=first_token_at - start_ms,
        occupancy_ms=occupancy,
        slot_released_at_ms=start_ms + occupancy,
        mask_payload_bytes=len(compressed.payload),
        planning_miss=miss,
    )
    return CloudTrace(
        frame_time_ms=first_token_at,
        frame=frame,
        events=events,
        done_time_ms=done_time,
        record=record,
        rtt_ms=rtt,
    )


@dataclass(frozen=True)
class BatchModel:
    """Decode-slot pool with a FIFO queue; closed-loop or Poisson arrivals."""

    slots: int
    mode: str = "closed"  # "closed" | "poisson"
    arrival_rate_per_s: float | None = None

    def __post_init__(self) -> None:
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.mode not in ("closed", "poisson"):
            raise ValueError(f"unknown batch mode {self.mode!r}")
        if self.mode == "poisson" and (self.arrival_rate_per_s is None or self.arrival_rate_per_s <= 0):
            raise ValueError("poisson mode needs a positive arrival rate")


@dataclass(frozen=True)
class ThroughputResult:
    tps: float
    completed: int
    mean_occupancy_ms: float
    window_ms: float
    analytic_tps: float


def run_throughput(
    batch: BatchModel,
    occupancies_ms: Sequence[float],
    completions: int,
    *,
    seed: int = 0,
) -> ThroughputResult:
    """Measure steady-state completions per second over the occupancy population.

    Requests cycle through ``occupancies_ms``. The first ``slots``
    completions are warmup and excluded from the measurement window. The
    returned analytic rate is slots / mean occupancy for cross-checks.
    """
    if not occupancies_ms:
        raise ValueError("need at least one occupancy sample")
    if any(t <= 0 for t in occupancies_ms):
        raise ValueError("occupancies must be positive")
    if completions < 1:
        raise ValueError("completions must be >= 1")

    loop = EventLoop()
    rng = random.Random(f"throughput:{seed}")
    state = {"admitted": 0, "in_flight": 0, "done": 0, "next": 0, "window_start": None, "window_done": 0}
    queue: list[int] = []
    target = completions + batch.slots  # warmup + measured
    done_times: list[float] = []

    def occupancy_of(index: int) -> float:
        return occupancies_ms[index % len(occupancies_ms)]

    def admit() -> None:
        index = state["next"]
        state["next"] += 1
        state["admitted"] += 1
        state["in_flight"] += 1
        loop.schedule_after(occupancy_of(index), complete)

    def complete() -> None:
        state["in_flight"] -= 1
        state["done"] += 1
        assert state["admitted"] == state["done"] + state["in_flight"] + len(queue)
        done_times.append(loop.now)
        if state["done"] == batch.slots:
            state["window_start"] = loop.now
        elif state["window_start"] is not None and state["done"] <= target:
            state["window_done"] += 1
        if batch.mode == "closed":
            if state["done"] + state["in_flight"] < target:
                admit()
        elif queue and state["in_flight"] < batch.slots:
            queue.pop(0)
            state["in_flight"] += 1
            index = state["next"]
            state["next"] += 1
            loop.schedule_after(occupancy_of(index), complete)

    if batch.mode == "closed":
        for _ in range(min(batch.slots, target)):
            admit()
    else:
        rate_per_ms = batch.arrival_rate_per_s / 1000.0

        def arrive() -> None:
            if state["admitted"] >= target:
                return
            state["admitted"] += 1
            if state["in_flight"] < batch.slots:
                state["in_flight"] += 1
                index = state["next"]
                state["next"] += 1
                loop.schedule_after(occupancy_of(index), complete)
            else:
                queue.append(1)
            loop.schedule_after(rng.expovariate(rate_per_ms), arrive)

        loop.schedule_after(rng.expovariate(rate_per_ms), arrive)

    loop.run()
    window_start = state["window_start"] if state["window_start"] is not None else 0.0
    window = done_times[-1] - window_start if done_times else 0.0
    measured = state["window_done"]
    tps = measured / (window / 1000.0) if window > 0 else 0.0
    mean_occ = sum(occupancy_of(i) for i in range(len(occupancies_ms))) / len(occupancies_ms)
    return ThroughputResult(
        tps=tps,
        completed=state["done"],
        mean_occupancy_ms=mean_occ,
        window_ms=window,
        analytic_tps=batch.slots / (mean_occ / 1000.0),
    )
