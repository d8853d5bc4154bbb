"""运行时：线路协议、链路仿真、回环端到端、流水线与自适应控制"""
import time

import numpy as np
import pytest

from src.engine.executor import ExecPlan, execute, forward_logits as forward
from src.errors import MalformedMessage, NetworkError, ServerError, VersionMismatch
from src.graph.dep_graph import infer_shapes
from src.graph.reference_model import INPUT_SHAPE, make_inputs
from src.ispm.codecs import CodecId
from src.ispm.packing import PackedTensor, PackingPolicy, pack, pack_dependencies, unpack, unpack_dependencies
from src.ispm.quantization import PASSTHROUGH
from src.profiler.calibration import calibrate
from src.profiler.network import NetworkEstimator
from src.runtime.client import DynoClient, TimingRecord, client_infer, response_logits
from src.runtime.controller import AdaptiveController
from src.runtime.link import LinkEmulator, LinkModel, emulate_link
from src.runtime.pipeline import Stage, StagedPipeline, run_pipelined, run_sequential
from src.runtime.protocol import (
    MAX_FRAME,
    MsgType,
    WireMessage,
    decode_message,
    encode_message,
    frame,
    frame_length,
)
from src.runtime.server import InferenceServer, ServerThread
from src.scheduler.constraints import parse_constraints, parse_targets
from src.scheduler.metrics import MetricVector
from src.scheduler.scheduler import ScheduleDecision

from .conftest import chain_graph

DIGEST = bytes(range(32))


def decision(s: int, b: int = PASSTHROUGH) -> ScheduleDecision:
    return ScheduleDecision(s_star=s, c_star=b, predicted=MetricVector(0.0, 0.0, 0.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def server(reference):
    g, w = reference
    with ServerThread(InferenceServer(g, w)) as thread:
        yield thread


@pytest.fixture
def client(server, reference):
    _, w = reference
    c = DynoClient('127.0.0.1', server.port).connect(w.digest)
    yield c
    c.close()


class TestProtocol:
    def test_hello_golden_bytes(self):
        data = encode_message(WireMessage.hello(DIGEST))
        assert data == b"DYNO\x01\x01" + bytes(8) + bytes(4) + bytes(2) + DIGEST

    def test_error_golden_bytes(self):
        data = encode_message(WireMessage.error(5, "ShapeError: bad"))
        assert data == b"DYNO\x01\x05" + (5).to_bytes(8, 'little') + bytes(6) + b"ShapeError: bad"
        assert decode_message(data).reason == "ShapeError: bad"

    def test_request_decodes_to_same_tensors(self):
        x = np.linspace(-1.0, 1.0, 24, dtype=np.float32).reshape(2, 3, 4)
        msg = WireMessage(MsgType.INFER_REQUEST, 7, 3, [pack(x, PackingPolicy(8), dep_id=2), pack(x, PackingPolicy(PASSTHROUGH), dep_id=3)])
        out = decode_message(encode_message(msg))
        assert (out.msg_type, out.request_id, out.split_id) == (MsgType.INFER_REQUEST, 7, 3)
        assert [t.dep_id for t in out.tensors] == [2, 3]
        np.testing.assert_array_equal(unpack(out.tensors[1]), x)
        assert out.trailer == b""

    def test_response_carries_server_time(self):
        logits = pack(np.zeros(10, dtype=np.float32), PackingPolicy(PASSTHROUGH))
        out = decode_message(encode_message(WireMessage.response(1, 4, logits, 2.5)))
        assert out.server_ms == pytest.approx(2.5)
        assert WireMessage.hello(DIGEST).server_ms is None

    def test_hello_digest_length(self):
        with pytest.raises(ValueError):
            WireMessage.hello(b"short")

    @pytest.mark.parametrize("data", [
        b"DYNO\x01",
        b"NOPE\x01\x01" + bytes(14),
        b"DYNO\x02\x01" + bytes(14),
        b"DYNO\x01\x09" + bytes(14),
        # 声明一个张量但记录被截断
        b"DYNO\x01\x02" + bytes(12) + b"\x01\x00" + b"ISPM\x01",
    ])
    def test_malformed(self, data):
        with pytest.raises(MalformedMessage):
            decode_message(data)

    def test_framing(self):
        framed = frame(b"abc")
        assert framed == b"\x03\x00\x00\x00abc"
        assert frame_length(framed[:4]) == 3
        with pytest.raises(MalformedMessage):
            frame_length((MAX_FRAME + 1).to_bytes(4, 'little'))


class TestLink:
    def test_delay_formula(self):
        link = LinkModel(bandwidth=1e6, latency=50.0)
        assert emulate_link(link, 200_000) == pytest.approx(250.0)
        assert emulate_link(link, 0) == pytest.approx(50.0)

    def test_from_mbps(self):
        link = LinkModel.from_mbps(8.0, 10.0)
        assert link.bandwidth == pytest.approx(1e6)

    @pytest.mark.parametrize("kwargs", [{'bandwidth': 0.0}, {'bandwidth': 1.0, 'latency': -1.0}])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            LinkModel(**kwargs)

    def test_emulator_sleeps_for_delay(self):
        slept = []
        emu = LinkEmulator(LinkModel(bandwidth=1e6, latency=50.0), sleep=slept.append)
        assert emu.uplink(200_000) == pytest.approx(250.0)
        assert emu.downlink(0) == pytest.approx(50.0)
        assert slept == pytest.approx([0.25, 0.05])

    def test_jitter_is_seeded_and_bounded(self):
        link = LinkModel(bandwidth=1e6, latency=10.0, jitter_ms=5.0)
        emu1 = LinkEmulator(link, jitter_seed=3, sleep=lambda _: None)
        emu2 = LinkEmulator(link, jitter_seed=3, sleep=lambda _: None)
        d1 = [emu1.uplink(1000) for _ in range(20)]
        d2 = [emu2.uplink(1000) for _ in range(20)]
        assert d1 == d2
        assert len(set(d1)) > 1
        assert all(11.0 <= d <= 16.0 for d in d1)


class TestLoopback:
    def test_passthrough_matches_local_for_every_split(self, reference, reference_inputs, client):
        g, w = reference
        for s in g.candidate_splits():
            for i, x in enumerate(reference_inputs[:4]):
                logits, record = client_infer(g, w, x, decision(s), client, request_id=i)
                np.testing.assert_array_equal(logits, forward(g, w, x))
                if s < g.N:
                    assert record.bytes_sent > 0 and record.bytes_received > 0

    def test_quantized_request_matches_local_reconstruction(self, reference, reference_inputs, client):
        g, w = reference
        s, x = 2, reference_inputs[0]
        logits, _ = client_infer(g, w, x, decision(s, 8), client, codec=CodecId.LZ4)

        outputs = execute(g, w, ExecPlan.client(s, x))
        packed = pack_dependencies(outputs, g.split_dependencies(s).dep_ids, PackingPolicy(bitwidth=8))
        local = execute(g, w, ExecPlan.server(g, s, unpack_dependencies(packed)))[g.output_id]
        np.testing.assert_array_equal(logits, local)

    def test_client_only_needs_no_network(self, reference, reference_inputs):
        g, w = reference
        logits, record = client_infer(g, w, reference_inputs[0], decision(g.N), None)
        np.testing.assert_array_equal(logits, forward(g, w, reference_inputs[0]))
        assert record.bytes_sent == 0 and record.server_ms == 0.0

    def test_offload_without_client(self, reference, reference_inputs):
        g, w = reference
        with pytest.raises(NetworkError):
            client_infer(g, w, reference_inputs[0], decision(0), None)

    def test_digest_mismatch(self, server):
        with pytest.raises(VersionMismatch):
            DynoClient('127.0.0.1', server.port).connect(b"\x00" * 32)

    def test_wrong_dependencies_keep_connection(self, reference, reference_inputs, client):
        g, w = reference
        x = reference_inputs[0]
        bogus = WireMessage(MsgType.INFER_REQUEST, 42, 2, [pack(x, PackingPolicy(PASSTHROUGH), dep_id=0)])
        reply = client.exchange(bogus).response
        assert reply.msg_type == MsgType.ERROR
        assert reply.request_id == 42
        assert reply.reason.startswith("MalformedMessage")

        logits, _ = client_infer(g, w, x, decision(2), client, request_id=43)
        np.testing.assert_array_equal(logits, forward(g, w, x))

    @pytest.mark.parametrize("huge_shape, constant, raw_len", [
        (True, True, 0),
        (False, False, 0),
        (False, False, 1 << 30),
    ], ids=["huge_constant", "raw_len_too_small", "raw_len_too_large"])
    def test_bad_tensor_header_is_rejected_before_decoding(self, reference, reference_inputs, server, client,
                                                          huge_shape, constant, raw_len):
        """头部声明的形状或 raw_len 与模型不符时回错误消息，不分配内存，连接和监听都保持可用"""
        g, w = reference
        shapes = infer_shapes(g)
        tensors = [
            PackedTensor(
                dep_id=d, shape=(20000, 20000, 8) if huge_shape else tuple(shapes[d]),
                bitwidth=8, val_min=0.0, scale_exp=0.0, constant=constant,
                codec=CodecId.NONE, raw_len=raw_len, payload=b"",
            )
            for d in g.split_dependencies(2).dep_ids
        ]
        reply = client.exchange(WireMessage(MsgType.INFER_REQUEST, 77, 2, tensors)).response
        assert reply.msg_type == MsgType.ERROR
        assert reply.request_id == 77
        assert reply.reason.startswith("MalformedMessage")

        logits, _ = client_infer(g, w, reference_inputs[0], decision(2), client, request_id=78)
        np.testing.assert_array_equal(logits, forward(g, w, reference_inputs[0]))
        with DynoClient('127.0.0.1', server.port).connect(w.digest) as fresh:
            assert fresh.connected

    def test_unexpected_error_keeps_listener(self, reference, reference_inputs):
        """执行中的意外异常变成错误应答，之后的连接照常服务"""
        g, w = reference
        srv = InferenceServer(g, w)

        def boom(msg):
            raise RuntimeError("执行器崩溃")

        srv.handle_request = boom
        with ServerThread(srv) as thread:
            with DynoClient('127.0.0.1', thread.port).connect(w.digest) as c:
                reply = c.exchange(WireMessage(MsgType.INFER_REQUEST, 5, 2, [])).response
                assert reply.msg_type == MsgType.ERROR
                assert reply.request_id == 5
                assert reply.reason.startswith("RuntimeError")
            with DynoClient('127.0.0.1', thread.port).connect(w.digest) as again:
                assert again.connected

    def test_garbage_frame_gets_error_reply(self, reference, reference_inputs, client):
        g, w = reference
        client._portal.call(client._stream.send, frame(b"junk"))
        reply, _ = client.receive()
        assert reply.msg_type == MsgType.ERROR

        logits, _ = client_infer(g, w, reference_inputs[1], decision(7), client)
        np.testing.assert_array_equal(logits, forward(g, w, reference_inputs[1]))

    def test_split_past_end_is_rejected(self, reference, reference_inputs, client):
        g, _ = reference
        reply = client.exchange(WireMessage(MsgType.INFER_REQUEST, 9, g.N)).response
        assert reply.msg_type == MsgType.ERROR and reply.request_id == 9

    def test_error_reply_raises(self):
        with pytest.raises(ServerError, match="ShapeError"):
            response_logits(WireMessage.error(1, "ShapeError: bad"))

    def test_server_trace_only_covers_suffix(self, reference, reference_inputs):
        g, w = reference
        srv = InferenceServer(g, w)
        srv.trace = []
        s = 7
        outputs = execute(g, w, ExecPlan.client(s, reference_inputs[0]))
        tensors = pack_dependencies(outputs, g.split_dependencies(s).dep_ids, PackingPolicy(PASSTHROUGH))
        reply = srv.handle_request(WireMessage(MsgType.INFER_REQUEST, 1, s, tensors))
        assert reply.msg_type == MsgType.INFER_RESPONSE
        assert srv.trace and min(srv.trace) > s
        assert srv.requests_served == 1

    def test_probe_latency(self, server, reference):
        _, w = reference
        link = LinkEmulator(LinkModel(bandwidth=1e9, latency=10.0))
        with DynoClient('127.0.0.1', server.port, link=link).connect(w.digest) as c:
            latency = c.probe_latency(3)
        assert 10.0 <= latency < 15.0


class TestQuantizedAccuracy:
    def test_top1_agreement_at_8_bits(self, reference):
        g, w = reference
        s = 2
        inputs = make_inputs(INPUT_SHAPE, 128, seed=11)
        agree = 0
        for x in inputs:
            outputs = execute(g, w, ExecPlan.client(s, x))
            packed = pack_dependencies(outputs, g.split_dependencies(s).dep_ids, PackingPolicy(bitwidth=8))
            logits = execute(g, w, ExecPlan.server(g, s, unpack_dependencies(packed)))[g.output_id]
            agree += int(np.argmax(logits) == np.argmax(forward(g, w, x)))
        assert agree / len(inputs) >= 0.97


class TestStagedPipeline:
    @staticmethod
    def sleeper(ms: float):
        def fn(item):
            time.sleep(ms / 1000.0)
            return item
        return fn

    def test_throughput_follows_bottleneck(self):
        stages = [Stage('a', self.sleeper(30)), Stage('b', self.sleeper(50)), Stage('c', self.sleeper(20))]
        report = StagedPipeline(stages, capacity=2).run(range(45), warmup=20)
        assert report.results == list(range(45))
        assert report.steady_throughput == pytest.approx(20.0, rel=0.1)
        assert report.bottleneck == 'b'

    def test_single_stage(self):
        report = StagedPipeline([Stage('only', self.sleeper(10))]).run(range(20), warmup=5)
        assert report.steady_throughput == pytest.approx(100.0, rel=0.1)

    def test_order_is_preserved(self):
        stages = [Stage('double', lambda x: 2 * x), Stage('inc', lambda x: x + 1)]
        assert StagedPipeline(stages, capacity=1).run(range(50)).results == [2 * i + 1 for i in range(50)]

    def test_failure_propagates(self):
        def boom(x):
            if x == 3:
                raise RuntimeError("stage failed")
            return x

        with pytest.raises(RuntimeError, match="stage failed"):
            StagedPipeline([Stage('boom', boom), Stage('id', lambda x: x)]).run(range(10))

    def test_validation(self):
        with pytest.raises(ValueError):
            StagedPipeline([])
        with pytest.raises(ValueError):
            StagedPipeline([Stage('a', lambda x: x)], capacity=0)


class TestRunPipelined:
    def test_results_match_sequential(self, reference, reference_inputs, client):
        g, w = reference
        inputs = reference_inputs[:8]
        piped = run_pipelined(g, w, inputs, decision(7, 8), client, first_request_id=100)
        seq = run_sequential(g, w, inputs, decision(7, 8), client, first_request_id=200)
        assert [r.request_id for _, r in piped.results] == list(range(100, 108))
        for (a, _), (b, _) in zip(piped.results, seq.results):
            np.testing.assert_array_equal(a, b)
        assert set(piped.stage_names) == {'inference', 'packing', 'send', 'receive'}

    def test_stale_replies_are_dropped(self, reference, reference_inputs, client):
        """连接上残留的应答不会被错配给本批请求"""
        g, w = reference
        inputs = reference_inputs[:4]
        client.send(WireMessage(MsgType.PROFILE_FEEDBACK, 1))
        outputs = execute(g, w, ExecPlan.client(7, inputs[0]))
        stale = pack_dependencies(outputs, g.split_dependencies(7).dep_ids, PackingPolicy(PASSTHROUGH))
        client.send(WireMessage(MsgType.INFER_REQUEST, 500, 7, stale))

        report = run_pipelined(g, w, inputs, decision(7), client)
        assert [r.request_id for _, r in report.results] == [0, 1, 2, 3]
        for (logits, record), x in zip(report.results, inputs):
            np.testing.assert_array_equal(logits, forward(g, w, x))
            assert record.bytes_received > 0

    def test_client_only_runs_locally(self, reference, reference_inputs):
        g, w = reference
        report = run_pipelined(g, w, reference_inputs[:4], decision(g.N), None)
        for (logits, record), x in zip(report.results, reference_inputs[:4]):
            np.testing.assert_array_equal(logits, forward(g, w, x))
            assert record.bytes_sent == 0

    def test_offload_requires_client(self, reference, reference_inputs):
        g, w = reference
        with pytest.raises(NetworkError):
            run_pipelined(g, w, reference_inputs[:2], decision(0), None)


class TestClosedLoop:
    def test_observed_transfer_predicts_emulated_delay(self, server, reference, reference_inputs):
        g, w = reference
        link = LinkModel(name='emu', bandwidth=200_000.0, latency=20.0)
        estimator = NetworkEstimator()
        with DynoClient('127.0.0.1', server.port, link=LinkEmulator(link)).connect(w.digest) as c:
            latency = c.probe_latency(3)
            estimator.observe_latency(latency, 'emu')
            _, record = client_infer(g, w, reference_inputs[0], decision(0), c)

        estimator.observe_transfer(record.bytes_sent, record.uplink_ms, 'emu', latency)
        predicted = estimator.estimate_transfer(record.bytes_sent, 'emu')
        assert predicted == pytest.approx(link.delay_ms(record.bytes_sent), rel=0.05)


class TestAdaptiveController:
    def controller(self, profile, hard=(), soft=("min:latency",)):
        estimator = NetworkEstimator(history={'wifi': {'latency': 5.0, 'bandwidth': 1e6}})
        return AdaptiveController(
            chain_graph(), None, profile, estimator, 'wifi',
            parse_constraints(hard), parse_targets(soft), pipelined=False,
        )

    def test_client_slowdown_doubles_prefix(self, profile):
        ctrl = self.controller(profile)
        ctrl.decide()
        forced = ctrl.observe(TimingRecord(request_id=0, s=4, bitwidth=PASSTHROUGH, device_ms=160.0, total_ms=160.0))
        assert not forced
        assert ctrl.load.state.sf_client == pytest.approx(2.0)
        assert ctrl.current_snapshot().sf_client == pytest.approx(2.0)

    def test_deadline_overrun_is_flagged(self, profile):
        ctrl = self.controller(profile, hard=("latency<=50ms",))
        assert ctrl.deadline_ms == 50.0
        assert ctrl.observe(TimingRecord(request_id=0, s=4, bitwidth=PASSTHROUGH, device_ms=80.0, total_ms=101.0))
        assert not ctrl.observe(TimingRecord(request_id=1, s=4, bitwidth=PASSTHROUGH, device_ms=80.0, total_ms=99.0))

    @pytest.mark.slow
    def test_batches_on_loopback(self, server, reference, reference_inputs):
        g, w = reference
        profile = calibrate(g, w, reference_inputs[:2], [0, 7, g.N], [8, PASSTHROUGH])
        estimator = NetworkEstimator(history={'loop': {'latency': 0.1, 'bandwidth': 1e9}})
        with DynoClient('127.0.0.1', server.port).connect(w.digest) as c:
            ctrl = AdaptiveController(
                g, w, profile, estimator, 'loop',
                parse_constraints(["latency<=0.001ms"]), parse_targets(["min:server_cost"]),
                client=c, pipelined=True,
            )
            assert ctrl.probe(2) is not None
            report = ctrl.run(reference_inputs[:8], batch_size=4)

        assert len(report.batches) == 2 and len(report.logits) == 8
        assert all(b.decision.best_effort for b in report.batches)
        # 截止时间无法满足，每批结束都会强制重新调度
        assert all(b.forced and b.rescheduled for b in report.batches)
        ids = [r.request_id for b in report.batches for r in b.records]
        assert ids == list(range(8))
        assert all(logits.shape == (10,) for logits in report.logits)
