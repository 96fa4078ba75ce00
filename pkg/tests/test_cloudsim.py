import random

import pytest

from pdsim.cloudsim import (
    EOT_TOKEN,
    BatchModel,
    TokenSource,
    run_throughput,
    serve_request,
)
from pdsim.planner import PlanConstraints, build_plan_table
from pdsim.protocol import DONE, AssistRequest, SseDecoder
from pdsim.refiner import TokenizedPrompt


def make_request(content_sentences: int = 40, words: int = 9, scene: str = "doc_qa") -> AssistRequest:
    content = " ".join(
        " ".join(f"w{s}x{w}" for w in range(words)) + "." for s in range(content_sentences)
    )
    return AssistRequest(
        scene=scene,
        model_version_label="base-v1",
        device_class="phone",
        prefix="setup tokens here",
        content=content,
        suffix="what happened ?",
        request_id="req-1",
    )


class TestTokenSource:
    def test_deterministic_and_eot_at_end(self):
        source = TokenSource(seed=9, total_tokens=6)
        again = TokenSource(seed=9, total_tokens=6)
        tokens = [source.token_at(i) for i in range(1, 7)]
        assert tokens == [again.token_at(i) for i in range(1, 7)]
        assert tokens[-1] == EOT_TOKEN
        assert EOT_TOKEN not in tokens[:-1]

    def test_divergence_changes_only_listed_positions(self):
        base = TokenSource(seed=9, total_tokens=10)
        diverged = TokenSource(seed=9, total_tokens=10, divergence=frozenset({4}))
        for position in range(1, 10):
            if position == 4:
                assert diverged.token_at(position) != base.token_at(position)
            else:
                assert diverged.token_at(position) == base.token_at(position)

    def test_position_bounds(self):
        source = TokenSource(seed=1, total_tokens=3)
        with pytest.raises(ValueError):
            source.token_at(0)
        with pytest.raises(ValueError):
            source.token_at(4)
        with pytest.raises(ValueError):
            TokenSource(seed=1, total_tokens=0)


class TestServeRequest:
    def test_budget_cuts_stream_and_slot(self, calibrated_model):
        req = make_request()
        source = TokenSource(seed=3, total_tokens=500)
        trace = serve_request(
            req, None, calibrated_model, source,
            ratio_override=0.5, max_tokens_override=21,
        )
        record = trace.record
        assert len(trace.events) == 20
        assert record.tokens_emitted == 21
        assert trace.events[-1][1].terminal
        assert record.occupancy_ms == pytest.approx(record.ttft_cloud_ms + 20 * calibrated_model.tpot_cloud)
        assert trace.done_time_ms == pytest.approx(record.slot_released_at_ms)
        # events tick at the cloud decode pace
        for j, (when, event) in enumerate(trace.events, start=1):
            assert event.index == j
            assert when == pytest.approx(trace.frame_time_ms + j * calibrated_model.tpot_cloud)

    def test_natural_finish_before_budget(self, calibrated_model):
        req = make_request()
        source = TokenSource(seed=3, total_tokens=3)
        trace = serve_request(req, None, calibrated_model, source, ratio_override=0.5, max_tokens_override=21)
        assert len(trace.events) == 2
        assert trace.record.tokens_emitted == 3
        assert trace.events[-1][1].token == EOT_TOKEN

    def test_planning_miss_streams_until_eot(self, calibrated_model):
        req = make_request(scene="unplanned")
        table = build_plan_table({"phone": calibrated_model}, {"doc_qa": PlanConstraints(0.25, 100.0)}, (8000,))
        source = TokenSource(seed=4, total_tokens=40)
        trace = serve_request(req, table, calibrated_model, source)
        assert trace.record.planning_miss
        assert trace.record.ratio == 1.0
        assert trace.frame.max_tokens == 0
        assert len(trace.events) == 39

    def test_planned_request_uses_table(self, calibrated_model):
        req = make_request()
        table = build_plan_table({"phone": calibrated_model}, {"doc_qa": PlanConstraints(0.25, 100.0)}, (8000,))
        prompt = TokenizedPrompt.from_text(req.prefix, req.content, req.suffix)
        plan = table.lookup("doc_qa", "phone", prompt.total_tokens)
        source = TokenSource(seed=5, total_tokens=500)
        trace = serve_request(req, table, calibrated_model, source)
        assert not trace.record.planning_miss
        assert trace.record.ratio == plan.ratio
        assert trace.frame.max_tokens == plan.max_tokens
        assert trace.record.tokens_emitted == plan.max_tokens
        assert trace.frame.mask.bit_length == prompt.total_tokens

    def test_wire_bytes_decode_to_one_frame_then_events_then_done(self, calibrated_model):
        req = make_request()
        source = TokenSource(seed=6, total_tokens=100)
        trace = serve_request(req, None, calibrated_model, source, ratio_override=0.5, max_tokens_override=12)
        items = SseDecoder().feed(trace.wire_bytes())
        assert items[0] == trace.frame
        assert len(items) == 1 + 11 + 1
        assert items[-1] is DONE

    def test_determinism(self, calibrated_model):
        req = make_request()
        source = TokenSource(seed=7, total_tokens=64)
        a = serve_request(req, None, calibrated_model, source, ratio_override=0.5, max_tokens_override=9)
        b = serve_request(req, None, calibrated_model, source, ratio_override=0.5, max_tokens_override=9)
        assert a.wire_bytes() == b.wire_bytes()
        assert a.events == b.events

    def test_rtt_sample_shifts_first_frame(self, calibrated_model):
        req = make_request()
        source = TokenSource(seed=8, total_tokens=30)
        base = serve_request(req, None, calibrated_model, source, rtt_ms=50.0, ratio_override=1.0, max_tokens_override=5)
        slow = serve_request(req, None, calibrated_model, source, rtt_ms=150.0, ratio_override=1.0, max_tokens_override=5)
        assert slow.frame_time_ms - base.frame_time_ms == pytest.approx(100.0)


class TestThroughput:
    def test_single_slot_single_occupancy(self):
        result = run_throughput(BatchModel(slots=1), [2000.0], completions=50)
        assert result.tps == pytest.approx(1000.0 / 2000.0)
        assert result.tps == pytest.approx(result.analytic_tps)

    def test_closed_loop_matches_analytic_rate(self):
        result = run_throughput(BatchModel(slots=64), [1100.0], completions=1024)
        assert result.tps == pytest.approx(result.analytic_tps, rel=0.02)

    def test_ratio_between_two_budgets(self):
        short = run_throughput(BatchModel(slots=64), [1100.0], completions=1024)
        long = run_throughput(BatchModel(slots=64), [6500.0], completions=1024)
        assert short.tps / long.tps == pytest.approx(6500.0 / 1100.0, rel=0.02)

    def test_mixed_occupancies(self):
        rng = random.Random(0)
        occupancies = [rng.uniform(500.0, 4000.0) for _ in range(200)]
        result = run_throughput(BatchModel(slots=16), occupancies, completions=3200)
        assert result.tps == pytest.approx(result.analytic_tps, rel=0.05)

    def test_poisson_underload_matches_arrival_rate(self):
        batch = BatchModel(slots=64, mode="poisson", arrival_rate_per_s=20.0)
        result = run_throughput(batch, [1000.0], completions=2000, seed=1)
        assert result.tps == pytest.approx(20.0, rel=0.1)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            run_throughput(BatchModel(slots=1), [], completions=10)
        with pytest.raises(ValueError):
            run_throughput(BatchModel(slots=1), [0.0], completions=10)
        with pytest.raises(ValueError):
            BatchModel(slots=0)
        with pytest.raises(ValueError):
            BatchModel(slots=1, mode="poisson")
