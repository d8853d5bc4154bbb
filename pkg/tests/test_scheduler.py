"""调度器：约束解析、代价模型、字典序调度与穷举对照"""
import numpy as np
import pytest

from src.errors import ConfigError, EmptySpace, MissingProfileEntry
from src.ispm.quantization import PASSTHROUGH
from src.profiler.load import LoadState
from src.profiler.network import LinkEstimate
from src.profiler.profile_db import ProfileDB
from src.scheduler.baselines import VARIANTS, client_only, dyno, neurosurgeon, server_only
from src.scheduler.constraints import (
    Goal,
    HardConstraint,
    Op,
    SoftTarget,
    parse_constraints,
    parse_hard_constraint,
    parse_soft_target,
    parse_targets,
)
from src.scheduler.cost_model import ConfigSpace, predict_metrics, predict_space, split_breakdown
from src.scheduler.metrics import Metric
from src.scheduler.scheduler import ProfilerSnapshot, schedule, should_reschedule

WIFI = LinkEstimate(latency_ms=2.0, bandwidth=50_000_000.0)


class TestParsing:
    @pytest.mark.parametrize("expr, expected", [
        ("latency<=100ms", HardConstraint(Metric.LATENCY, Op.LE, 100.0)),
        ("accuracy<=1pp", HardConstraint(Metric.ACCURACY, Op.LE, 1.0)),
        ("accuracy <= 0.5%", HardConstraint(Metric.ACCURACY, Op.LE, 0.5)),
        ("throughput>=20/s", HardConstraint(Metric.THROUGHPUT, Op.GE, 20.0)),
        ("latency=100±5ms", HardConstraint(Metric.LATENCY, Op.APPROX, 100.0, 5.0)),
        ("latency=100+-5", HardConstraint(Metric.LATENCY, Op.APPROX, 100.0, 5.0)),
        ("server-cost<=3.5", HardConstraint(Metric.SERVER_COST, Op.LE, 3.5)),
    ])
    def test_hard(self, expr, expected):
        assert parse_hard_constraint(expr) == expected

    @pytest.mark.parametrize("expr", [
        "latency<100ms", "latency<=100pp", "speed<=3", "latency<=abc", "throughput>=20±1/s", "",
    ])
    def test_bad_hard(self, expr):
        with pytest.raises(ConfigError):
            parse_hard_constraint(expr)

    def test_soft(self):
        assert parse_soft_target("min:server_cost") == SoftTarget(Metric.SERVER_COST, Goal.MIN)
        assert parse_soft_target("max:throughput") == SoftTarget(Metric.THROUGHPUT, Goal.MAX)
        assert parse_soft_target("approach:latency:80") == SoftTarget(Metric.LATENCY, Goal.APPROACH, 80.0)

    @pytest.mark.parametrize("expr", ["lowest:latency", "min", "approach:latency", "min:speed", "approach:latency:x"])
    def test_bad_soft(self, expr):
        with pytest.raises(ConfigError):
            parse_soft_target(expr)

    def test_duplicate_target_metric(self):
        with pytest.raises(ConfigError):
            parse_targets(["min:latency", "approach:latency:50"])

    def test_round_trip_through_str(self):
        for expr in ["latency<=100ms", "throughput>=20/s", "latency=100±5ms"]:
            c = parse_hard_constraint(expr)
            assert parse_hard_constraint(str(c)) == c
        assert parse_constraints(None) == []


def _stage_profile() -> ProfileDB:
    """设备 30ms、服务端 20ms 的单切分点剖析表"""
    return ProfileDB(
        model_name="stages", N=2, splits=[1], bitwidths=[PASSTHROUGH],
        t_layer_offline={'cpu': {0: 0.0, 1: 30.0, 2: 0.0}},
        t_server={0: 0.0, 1: 0.0, 2: 20.0},
        t_pack={1: {PASSTHROUGH: 0.0}}, d_size={1: {PASSTHROUGH: 0.0}}, acc_delta={1: {PASSTHROUGH: 0.0}},
    )


class TestCostModel:
    def test_sequential_sum(self, profile):
        net = LinkEstimate(latency_ms=10.0, bandwidth=1_000_000.0)
        mv = predict_metrics(profile, net, LoadState(), (2, 8))
        assert mv.device_cost == pytest.approx(40.8)
        # 上行 10 + 2000B / 1MB/s，下行只有时延
        assert mv.net_time == pytest.approx(22.0)
        assert mv.server_cost == pytest.approx(20.0)
        assert mv.latency == pytest.approx(82.8)
        assert mv.throughput == pytest.approx(1000.0 / 82.8)
        assert mv.accuracy == 0.0

    def test_pipelined_bottleneck(self):
        net = LinkEstimate(latency_ms=25.0, bandwidth=1_000_000.0)
        piped = predict_metrics(_stage_profile(), net, LoadState(), (1, PASSTHROUGH), pipelined=True)
        assert piped.throughput == pytest.approx(20.0)
        assert piped.latency == pytest.approx(100.0)
        seq = predict_metrics(_stage_profile(), net, LoadState(), (1, PASSTHROUGH))
        assert seq.throughput == pytest.approx(10.0)

    def test_return_leg_is_charged(self, profile):
        """下行按 logits 字节数计入传输时间，客户端独占时不计"""
        net = LinkEstimate(latency_ms=10.0, bandwidth=1_000_000.0)
        base = predict_metrics(profile, net, LoadState(), (2, 8))
        profile.d_response = 5000.0
        mv = predict_metrics(profile, net, LoadState(), (2, 8))
        assert mv.net_time == pytest.approx(base.net_time + 5.0)
        assert predict_metrics(profile, net, LoadState(), (4, 8)).net_time == 0.0
        metrics = predict_space(profile, net, LoadState(), ConfigSpace.of([(2, 8)]))
        assert metrics['net_time'][0] == mv.net_time

    def test_client_only_uses_no_network(self, profile):
        mv = predict_metrics(profile, WIFI, LoadState(), (4, 32))
        assert mv.net_time == 0.0 and mv.server_cost == 0.0
        assert mv.latency == 80.0

    def test_load_scales_both_sides(self, profile):
        load = LoadState(sf_client=2.0, sf_server=3.0)
        mv = predict_metrics(profile, WIFI, load, (2, 32))
        assert mv.device_cost == pytest.approx(2 * 40.0 + 0.4)
        assert mv.server_cost == pytest.approx(3 * 20.0)

    def test_vector_matches_scalar(self, profile):
        space = ConfigSpace.from_profile(profile)
        for pipelined in (False, True):
            metrics = predict_space(profile, WIFI, LoadState(1.3, 0.7), space, pipelined)
            for i, cfg in enumerate(space.configs()):
                mv = predict_metrics(profile, WIFI, LoadState(1.3, 0.7), cfg, pipelined)
                for m in Metric:
                    assert metrics[m][i] == mv.get(m)

    def test_missing_entry(self, profile):
        with pytest.raises(MissingProfileEntry):
            predict_metrics(profile, WIFI, LoadState(), (1, 8))

    def test_space_filters(self, profile):
        assert ConfigSpace.from_profile(profile, bitwidths=[32]).configs() == [(0, 32), (2, 32), (4, 32)]
        assert ConfigSpace.from_profile(profile, splits=[2]).configs() == [(2, 4), (2, 8), (2, 32)]

    def test_breakdown(self, profile):
        net = LinkEstimate(latency_ms=10.0, bandwidth=1_000_000.0)
        rows = {r.s: r for r in split_breakdown(profile, net, LoadState(), allowance_pp=2.0)}
        assert rows[2].bitwidth == 4
        assert rows[2].device_ms == pytest.approx(40.0)
        assert rows[2].net_ms == pytest.approx(21.0)
        assert rows[0].bitwidth == 8
        assert rows[4].latency_ms == pytest.approx(80.0)


class TestSchedule:
    def test_single_config(self, profile):
        space = ConfigSpace.of([(2, 8)])
        d = schedule(space, [], [parse_soft_target("max:server_cost")], WIFI, LoadState(), profile)
        assert d.config == (2, 8)
        assert not d.best_effort

    def test_empty_space(self, profile):
        with pytest.raises(EmptySpace):
            schedule(ConfigSpace.of([]), [], [parse_soft_target("min:latency")], WIFI, LoadState(), profile)

    def test_requires_target(self, profile):
        with pytest.raises(ConfigError):
            schedule(ConfigSpace.from_profile(profile), [], [], WIFI, LoadState(), profile)

    def test_infeasible_latency_best_effort(self, profile):
        space = ConfigSpace.from_profile(profile)
        d = schedule(space, parse_constraints(["latency<=1ms"]), [parse_soft_target("min:server_cost")],
                     WIFI, LoadState(), profile)
        assert d.best_effort
        assert d.violated.metric == Metric.LATENCY
        latencies = predict_space(profile, WIFI, LoadState(), space)[Metric.LATENCY]
        assert d.predicted.latency == latencies.min()

    def test_accuracy_constraint_prunes_bitwidths(self, profile):
        space = ConfigSpace.from_profile(profile)
        d = schedule(space, parse_constraints(["accuracy<=1pp"]), parse_targets(["min:latency"]),
                     LinkEstimate(latency_ms=1.0, bandwidth=1e5), LoadState(), profile)
        assert profile.acc_delta[d.s_star][d.c_star] <= 1.0

    def test_onloading_under_lenient_deadline(self, profile):
        space = ConfigSpace.from_profile(profile)
        d = schedule(space, parse_constraints(["latency<=500ms"]), parse_targets(["min:server_cost"]),
                     WIFI, LoadState(), profile)
        # 服务端开销都为 0 时取最大的 s，再取最小位宽
        assert d.config == (4, 4)

    def test_tie_prefers_larger_split_then_smaller_bitwidth(self, profile):
        space = ConfigSpace.from_profile(profile)
        d = schedule(space, [], parse_targets(["min:accuracy"]), WIFI, LoadState(), profile)
        assert d.config == (4, 4)

    def test_large_space_is_fast(self):
        n = 588
        bits = list(range(1, 17)) + [PASSTHROUGH]
        rng = np.random.default_rng(0)
        prof = ProfileDB(
            model_name="wide", N=n, splits=list(range(n + 1)), bitwidths=bits,
            t_layer_offline={'cpu': {i: float(rng.uniform(0, 2)) for i in range(n + 1)}},
            t_server={i: float(rng.uniform(0, 1)) for i in range(n + 1)},
            t_pack={s: {b: 0.1 for b in bits} for s in range(n + 1)},
            d_size={s: {b: float(rng.integers(0, 10_000)) for b in bits} for s in range(n + 1)},
            acc_delta={s: {b: float(rng.uniform(0, 5)) for b in bits} for s in range(n + 1)},
        )
        space = ConfigSpace.from_profile(prof)
        assert len(space) >= 10_000
        d = schedule(space, parse_constraints(["latency<=300ms", "accuracy<=1pp"]),
                     parse_targets(["min:server_cost", "max:throughput"]), WIFI, LoadState(), prof)
        # 宽松上界，仅防止退化为逐配置 Python 计算
        assert d.elapsed_ms < 250.0


# ---------- 穷举对照 ----------

def _scalar_key(target: SoftTarget, value: float) -> float:
    if target.goal == Goal.MIN:
        return value
    if target.goal == Goal.MAX:
        return -value
    return abs(value - target.value)


def _scalar_ok(c: HardConstraint, v: float) -> bool:
    if c.op == Op.LE:
        return v <= c.thr
    if c.op == Op.GE:
        return v >= c.thr
    return abs(v - c.thr) <= c.eps


def brute_force(profile, net, load, configs, constraints, targets, pipelined):
    vectors = {cfg: predict_metrics(profile, net, load, cfg, pipelined) for cfg in configs}

    def key(cfg):
        mv = vectors[cfg]
        return tuple(_scalar_key(t, mv.get(t.metric)) for t in targets) + (-cfg[0], cfg[1])

    feasible = list(configs)
    for c in constraints:
        ok = [cfg for cfg in feasible if _scalar_ok(c, vectors[cfg].get(c.metric))]
        if not ok:
            violation = {cfg: abs(vectors[cfg].get(c.metric) - c.thr) / max(abs(c.thr), 1e-9) for cfg in feasible}
            least = min(violation.values())
            return min((cfg for cfg in feasible if violation[cfg] == least), key=key), True
        feasible = ok
    return min(feasible, key=key), False


def _random_scenario(rng):
    n = int(rng.integers(2, 40))
    all_bits = list(range(1, 17)) + [PASSTHROUGH]
    bits = sorted(rng.choice(all_bits, size=int(rng.integers(1, len(all_bits) + 1)), replace=False).tolist())
    splits = sorted(set(rng.integers(0, n + 1, size=int(rng.integers(1, n + 2))).tolist()))
    # 小整数取值，制造大量平局
    prof = ProfileDB(
        model_name="random", N=n, splits=splits, bitwidths=bits,
        t_layer_offline={'cpu': {i: float(rng.integers(0, 6)) for i in range(n + 1)}},
        t_server={i: float(rng.integers(0, 4)) for i in range(n + 1)},
        t_pack={s: {b: float(rng.integers(0, 3)) for b in bits} for s in splits},
        d_size={s: {b: float(rng.integers(0, 5)) * 1000.0 for b in bits} for s in splits},
        acc_delta={s: {b: float(rng.integers(0, 4)) for b in bits} for s in splits},
    )
    net = LinkEstimate(latency_ms=float(rng.integers(0, 50)), bandwidth=float(rng.choice([1e4, 1e5, 1e6, 1e7])))
    load = LoadState(sf_client=float(rng.choice([0.5, 1.0, 2.0])), sf_server=float(rng.choice([1.0, 1.5])))
    space = ConfigSpace.from_profile(prof)
    if rng.random() < 0.3 and len(space) > 1:
        keep = rng.choice(len(space), size=int(rng.integers(1, len(space) + 1)), replace=False)
        space = ConfigSpace.of([space[int(i)] for i in sorted(keep)])

    pipelined = bool(rng.random() < 0.5)
    metrics = predict_space(prof, net, load, space, pipelined)
    constraints = []
    for _ in range(int(rng.integers(0, 4))):
        metric = Metric(str(rng.choice([m.value for m in Metric])))
        values = metrics[metric]
        pivot = float(rng.choice(values)) * float(rng.choice([0.5, 1.0, 1.0, 1.5]))
        op = Op(str(rng.choice([o.value for o in Op])))
        eps = float(rng.choice([0.0, 1.0, 5.0])) if op == Op.APPROX else 0.0
        constraints.append(HardConstraint(metric, op, pivot, eps))
    metrics_for_targets = [str(m) for m in rng.permutation([m.value for m in Metric])[:int(rng.integers(1, 4))]]
    targets = []
    for name in metrics_for_targets:
        goal = Goal(str(rng.choice([g.value for g in Goal])))
        value = float(rng.choice(metrics[Metric(name)])) if goal == Goal.APPROACH else None
        targets.append(SoftTarget(Metric(name), goal, value))
    return prof, net, load, space, constraints, targets, pipelined


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(2024)
    best_effort_seen = 0
    for _ in range(500):
        prof, net, load, space, constraints, targets, pipelined = _random_scenario(rng)
        d = schedule(space, constraints, targets, net, load, prof, pipelined)
        expected, best_effort = brute_force(prof, net, load, space.configs(), constraints, targets, pipelined)
        assert d.config == expected
        assert d.best_effort == best_effort
        best_effort_seen += best_effort
    assert best_effort_seen > 0


class TestReschedule:
    BASE = ProfilerSnapshot(latency_ms=50.0, bandwidth=1_000_000.0, sf_client=1.0, sf_server=1.0)

    def test_identical(self):
        assert not should_reschedule(self.BASE, self.BASE)

    def test_small_bandwidth_change(self):
        cur = ProfilerSnapshot(50.0, 1_049_000.0, 1.0, 1.0)
        assert not should_reschedule(self.BASE, cur)

    def test_latency_change(self):
        assert should_reschedule(self.BASE, ProfilerSnapshot(60.0, 1_000_000.0, 1.0, 1.0))

    def test_load_change(self):
        assert should_reschedule(self.BASE, ProfilerSnapshot(50.0, 1_000_000.0, 1.2, 1.0))

    def test_forced(self):
        assert should_reschedule(self.BASE, self.BASE, forced=True)


class TestBaselines:
    def test_endpoints(self, profile):
        assert client_only(profile, WIFI, LoadState()).config == (4, PASSTHROUGH)
        assert server_only(profile, WIFI, LoadState()).config == (0, PASSTHROUGH)

    def test_neurosurgeon_never_quantises(self, profile):
        slow = LinkEstimate(latency_ms=5.0, bandwidth=100_000.0)
        assert neurosurgeon(profile, slow, LoadState()).c_star == PASSTHROUGH

    def test_dyno_dominates_on_its_target(self, profile):
        targets = parse_targets(["max:throughput"])
        for bandwidth in (1e4, 1e5, 1e6, 1e7, 1e8):
            net = LinkEstimate(latency_ms=5.0, bandwidth=bandwidth)
            ours = dyno(profile, net, LoadState(), pipelined=True, targets=targets)
            for name in ('neurosurgeon', 'client-only', 'server-only'):
                other = VARIANTS[name](profile, net, LoadState(), pipelined=True)
                assert ours.predicted.throughput >= other.predicted.throughput
