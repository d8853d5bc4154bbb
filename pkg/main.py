# -*- coding: utf-8 -*-
"""
命令行界面
校准剖析表、运行服务端/客户端、打包解包张量、运行参数扫描
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src.config.dyno_config import DynoConfig
from src.errors import ConfigError, DynoError
from src.graph.model_io import load_model, save_model, save_weights
from src.graph.reference_model import build_reference_model, make_inputs
from src.ispm.codecs import get_codec
from src.ispm.packing import PackedTensor, PackingPolicy, pack, unpack
from src.ispm.quantization import PASSTHROUGH, error_bound
from src.profiler.calibration import calibrate, compression_report
from src.profiler.load import LoadState
from src.profiler.network import NetworkEstimator
from src.profiler.profile_db import ProfileDB
from src.runtime.client import DynoClient
from src.runtime.controller import AdaptiveController
from src.runtime.link import LinkEmulator, resolve_link
from src.runtime.pipeline import run_pipelined, run_sequential
from src.runtime.server import run_server
from src.scheduler.constraints import parse_constraints, parse_targets
from src.scheduler.cost_model import ConfigSpace, predict_metrics, split_breakdown
from src.scheduler.metrics import MetricVector
from src.scheduler.scheduler import ScheduleDecision, schedule
from src.sweep import LiveContext, SweepSpec, run_sweep, write_csv

logger = logging.getLogger("dyno")


def create_parser():
    """创建命令行参数解析器"""
    parser = argparse.ArgumentParser(
        description='DynO - CNN 切分推理：设备端/服务端协同执行与中间张量打包',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例用法:
  python main.py make-model --seed 0
  python main.py profile --count 16 --seed 0
  python main.py report --link 4g --allowance 1
  python main.py serve --port 7301
  python main.py infer --link wifi --hard "latency<=100ms" --soft "min:server_cost"
  python main.py run-pipelined --split 7 --bitwidth 8 --count 60
  python main.py sweep --axis bandwidth --points 0.1 1 10 100 --soft "max:throughput" --seed 0
  python main.py pack tensor.npy --bitwidth 4 -o tensor.ispm
  python main.py unpack tensor.ispm -o restored.npy
        """
    )

    parser.add_argument('--config', '-c', type=str, default='config/config.yaml', help='配置文件路径（YAML或JSON格式）')
    parser.add_argument('--create-config', type=str, help='创建默认配置文件到指定路径')
    parser.add_argument('--verbose', '-v', action='store_true', help='详细输出模式')
    parser.add_argument('--quiet', '-q', action='store_true', help='静默模式')
    parser.add_argument('--no-log-file', action='store_true', help='不写日志文件')

    sub = parser.add_subparsers(dest='command')

    def model_args(p):
        p.add_argument('--model', type=str, help='模型描述文件路径')
        p.add_argument('--weights', type=str, help='权重文件路径')

    def schedule_args(p):
        p.add_argument('--profile', type=str, help='剖析文件路径')
        p.add_argument('--link', type=str, help='链路类型（ethernet / wifi / 4g / 3g 或配置中的其它名称）')
        p.add_argument('--hard', action='append', help='硬约束，可重复，按出现顺序为优先级，如 "latency<=100ms"')
        p.add_argument('--soft', action='append', help='软目标，可重复，如 "min:server_cost"')
        p.add_argument('--split', type=int, help='固定切分点（跳过调度）')
        p.add_argument('--bitwidth', type=int, help='固定位宽（32 表示不量化）')

    def remote_args(p):
        p.add_argument('--host', type=str, help='服务端地址')
        p.add_argument('--port', type=int, help='服务端端口')

    p = sub.add_parser('make-model', help='生成带种子的参考模型与权重')
    model_args(p)
    p.add_argument('--seed', type=int, required=True, help='随机种子')

    p = sub.add_parser('profile', help='离线校准并输出剖析文件')
    model_args(p)
    p.add_argument('--out', '-o', type=str, help='剖析文件输出路径')
    p.add_argument('--count', type=int, help='校准输入个数')
    p.add_argument('--seed', type=int, required=True, help='校准输入的随机种子')
    p.add_argument('--unit', type=str, help='处理单元标签')
    p.add_argument('--relu-only', action='store_true', help='只在 ReLU 之后切分')
    p.add_argument('--bitwidths', type=int, nargs='+', help='候选位宽列表')
    p.add_argument('--merge-units', action='store_true', help='保留已有剖析文件中其它处理单元的逐层耗时')

    p = sub.add_parser('report', help='输出最低位宽表、各切分点耗时分解与压缩比')
    schedule_args(p)
    model_args(p)
    p.add_argument('--allowance', type=float, default=1.0, help='耗时分解使用的精度损失上限 (pp)')
    p.add_argument('--compression', action='store_true', help='输出每层压缩比（需要模型）')
    p.add_argument('--count', type=int, default=4, help='压缩比统计的输入个数')
    p.add_argument('--seed', type=int, help='输入随机种子')

    p = sub.add_parser('serve', help='运行推理服务端')
    model_args(p)
    remote_args(p)

    for name, helptext in (('infer', '运行自适应切分推理'), ('run-pipelined', '以固定配置流水线执行并报告吞吐')):
        p = sub.add_parser(name, help=helptext)
        model_args(p)
        remote_args(p)
        schedule_args(p)
        p.add_argument('--count', type=int, default=32, help='推理次数')
        p.add_argument('--seed', type=int, help='输入随机种子')
        p.add_argument('--pipelined', action='store_true', help='启用流水线')
        p.add_argument('--warmup', type=int, default=0, help='稳态吞吐统计前跳过的请求数')

    p = sub.add_parser('sweep', help='参数扫描并输出 CSV')
    model_args(p)
    p.add_argument('--profile', type=str, help='剖析文件路径')
    p.add_argument('--axis', required=True, choices=['bandwidth', 'client-slowdown', 'deadline'], help='扫描轴')
    p.add_argument('--points', type=float, nargs='+', required=True, help='扫描取值（带宽 Mbps / 减速倍数 / 截止时间 ms）')
    p.add_argument('--link', type=str, help='基础链路类型')
    p.add_argument('--hard', action='append', help='硬约束')
    p.add_argument('--soft', action='append', help='软目标')
    p.add_argument('--variants', nargs='+', help='调度变体')
    p.add_argument('--out', '-o', type=str, help='CSV 输出路径')
    p.add_argument('--pipelined', action='store_true', help='按流水线吞吐预测与实测')
    p.add_argument('--live', action='store_true', help='在本进程内启动服务端并实测')
    p.add_argument('--requests', type=int, help='live 模式下每个扫描点的请求数')
    p.add_argument('--seed', type=int, required=True, help='随机种子（live 模式据此生成输入）')

    p = sub.add_parser('pack', help='打包 .npy 张量文件')
    p.add_argument('input', type=str, help='.npy 张量文件')
    p.add_argument('--bitwidth', type=int, default=8, help='位宽（32 表示不量化）')
    p.add_argument('--codec', type=str, default='lz4', choices=['lz4', 'none'], help='编解码器')
    p.add_argument('--out', '-o', type=str, help='输出文件路径（默认 <input>.ispm）')

    p = sub.add_parser('unpack', help='解包为 .npy 张量文件')
    p.add_argument('input', type=str, help='打包文件')
    p.add_argument('--out', '-o', type=str, help='输出文件路径（默认 <input>.npy）')

    return parser


# ---------- 配置与模型 ----------

def _load_config(args) -> DynoConfig:
    config = DynoConfig(args.config if Path(args.config).exists() else None)

    overrides = {
        'model': 'model.path',
        'weights': 'model.weights',
        'seed': 'model.seed',
        'host': 'runtime.host',
        'port': 'runtime.port',
        'link': 'network.type',
        'hard': 'scheduler.hard',
        'soft': 'scheduler.soft',
        'profile': 'profiler.profile_file',
        'unit': 'profiler.unit',
        'bitwidths': 'ispm.bitwidths',
    }
    for attr, key in overrides.items():
        value = getattr(args, attr, None)
        if key and value is not None:
            config.set(key, value)
    if getattr(args, 'pipelined', False):
        config.set('scheduler.pipelined', True)
    if getattr(args, 'relu_only', False):
        config.set('profiler.relu_only', True)

    if args.verbose:
        config.set('logging.level', 'DEBUG')
    elif args.quiet:
        config.set('logging.level', 'ERROR')

    errors = config.validate_config()
    if errors:
        raise ConfigError("配置无效:\n  " + "\n  ".join(errors))
    return config


def _load_model(config: DynoConfig):
    return load_model(config.get('model.path'), config.get('model.weights'))


def _fixed_decision(args, config: DynoConfig, graph, profile: Optional[ProfileDB]) -> ScheduleDecision:
    s = args.split
    b = args.bitwidth if args.bitwidth is not None else PASSTHROUGH
    PackingPolicy(bitwidth=b)
    graph.split_dependencies(s)
    predicted = MetricVector(0.0, 0.0, 0.0, 0.0, 0.0)
    if profile is not None and profile.has_entry(s, b):
        link = resolve_link(config)
        estimator = NetworkEstimator.from_config(config)
        predicted = predict_metrics(
            profile, estimator.current(link.name), LoadState(), (s, b), config.get('scheduler.pipelined', False)
        )
    return ScheduleDecision(s_star=s, c_star=b, predicted=predicted)


def _connect(config: DynoConfig, weights) -> DynoClient:
    link = resolve_link(config)
    client = DynoClient(
        config.get('runtime.host'),
        config.get('runtime.port'),
        link=LinkEmulator(link, jitter_seed=config.get('network.jitter_seed')),
        connect_timeout=config.get('runtime.connect_timeout_s', 10.0),
        request_timeout=config.get('runtime.request_timeout_s', 60.0),
    )
    return client.connect(weights.digest)


# ---------- 子命令 ----------

def cmd_make_model(args, config: DynoConfig) -> int:
    seed = config.get('model.seed', 0)
    graph, weights = build_reference_model(seed)
    save_model(graph, config.get('model.path'))
    save_weights(weights, config.get('model.weights'))
    print(f"参考模型已写入: {config.get('model.path')}")
    print(f"权重已写入: {config.get('model.weights')}（种子 {seed}）")
    stats = graph.get_statistics()
    print(f"  节点数: {stats['total_nodes']}  边数: {stats['total_edges']}  候选切分点: {len(graph.candidate_splits())}")
    return 0


def cmd_profile(args, config: DynoConfig) -> int:
    graph, weights = _load_model(config)
    count = args.count or config.get('profiler.calibration_count', 16)
    seed = config.get('model.seed', 0)
    inputs = make_inputs(graph[graph.input_id].params['shape'], count, seed=seed)
    splits = [sp.s for sp in graph.candidate_splits(config.get('profiler.relu_only', False))]

    db = calibrate(
        graph, weights, inputs, splits, config.get('ispm.bitwidths'),
        unit=config.get('profiler.unit', 'cpu'),
        codec=get_codec(config.get('ispm.codec', 'lz4')).codec_id,
        server_speedup=config.get('profiler.server_speedup', 1.0),
    )

    out = args.out or config.get('profiler.profile_file')
    if args.merge_units and Path(out).exists():
        previous = ProfileDB.load(out)
        for unit, times in previous.t_layer_offline.items():
            db.t_layer_offline.setdefault(unit, times)
    db.save(out)
    print(f"剖析文件已写入: {out}")
    print(f"  切分点: {db.splits}")
    print(f"  位宽: {db.bitwidths}")
    return 0


def cmd_report(args, config: DynoConfig) -> int:
    profile = ProfileDB.load(config.get('profiler.profile_file'))
    link = resolve_link(config)
    estimator = NetworkEstimator.from_config(config)
    net = estimator.current(link.name)

    print(f"模型 {profile.model_name}，处理单元 {profile.unit}，链路 {link.name} "
          f"(L={net.latency_ms}ms, B={net.bandwidth:.0f}B/s)")

    print("\n最低位宽（精度损失上限 1 / 2 / 5 pp）:")
    for s, row in profile.lowest_bitwidth_table().items():
        print(f"  s={s:>3}: " + "  ".join(f"{a:g}pp->{b:>2}" for a, b in row.items()))

    print(f"\n各切分点耗时分解（精度损失上限 {args.allowance:g}pp）:")
    print(f"  {'s':>3} {'b':>3} {'device':>9} {'pack':>8} {'net':>9} {'server':>9} {'total':>9} {'bytes':>10}")
    for r in split_breakdown(profile, net, LoadState(), args.allowance):
        print(f"  {r.s:>3} {r.bitwidth:>3} {r.device_ms:>9.3f} {r.pack_ms:>8.3f} {r.net_ms:>9.3f} "
              f"{r.server_ms:>9.3f} {r.latency_ms:>9.3f} {r.d_size:>10.0f}")

    if args.compression:
        graph, weights = _load_model(config)
        b = args.bitwidth or 4
        inputs = make_inputs(graph[graph.input_id].params['shape'], args.count, seed=config.get('model.seed', 0))
        print(f"\n每层压缩比（位宽 {b}）:")
        for row in compression_report(graph, weights, inputs, b):
            print(f"  {row.node_id:>3} {row.kind:<8} {row.float_bytes:>8}B -> {row.packed_bytes:>9.1f}B  {row.ratio:>7.2f}x")
    return 0


def cmd_serve(args, config: DynoConfig) -> int:
    graph, weights = _load_model(config)
    run_server(graph, weights, config.get('runtime.host'), config.get('runtime.port'))
    return 0


def cmd_infer(args, config: DynoConfig, pipelined_report: bool = False) -> int:
    graph, weights = _load_model(config)
    pipelined = config.get('scheduler.pipelined', False) or pipelined_report
    seed = config.get('model.seed', 0)
    inputs = make_inputs(graph[graph.input_id].params['shape'], args.count, seed=seed)

    profile_path = config.get('profiler.profile_file')
    profile = ProfileDB.load(profile_path) if args.split is None or Path(profile_path).exists() else None

    client = None
    try:
        if args.split is not None:
            decision = _fixed_decision(args, config, graph, profile)
            if decision.s_star < graph.N:
                client = _connect(config, weights)
            runner = run_pipelined if pipelined else run_sequential
            report = runner(graph, weights, inputs, decision, client, warmup=args.warmup)
            records = [r for _, r in report.results]
        else:
            client = _connect(config, weights)
            estimator = NetworkEstimator.from_config(config)
            controller = AdaptiveController(
                graph, weights, profile, estimator, config.get('network.type'),
                parse_constraints(config.get('scheduler.hard')),
                parse_targets(config.get('scheduler.soft')),
                client=client,
                pipelined=pipelined,
                threshold=config.get('scheduler.reschedule_threshold', 0.05),
                deadline_factor=config.get('runtime.deadline_factor', 2.0),
                capacity=config.get('runtime.queue_capacity', 2),
            )
            controller.probe()
            if pipelined_report:
                decision = controller.decide()
                report = run_pipelined(
                    graph, weights, inputs, decision, client,
                    capacity=config.get('runtime.queue_capacity', 2), warmup=args.warmup,
                )
                records = [r for _, r in report.results]
            else:
                result = controller.run(inputs, config.get('runtime.batch_size', 16))
                records = [r for b in result.batches for r in b.records]
                decision = controller.decision
                for i, b in enumerate(result.batches):
                    flag = "（已重新调度）" if b.rescheduled else ""
                    print(f"批次 {i}: s={b.decision.s_star} b={b.decision.c_star} 吞吐 {b.throughput:.2f}/s{flag}")
    finally:
        if client is not None:
            client.close()

    print(f"\n配置: s={decision.s_star} b={decision.c_star}  请求数 {len(records)}")

    def mean(key):
        return float(np.mean([getattr(r, key) for r in records])) if records else 0.0

    print(f"  平均耗时 (ms): device {mean('device_ms'):.3f}  pack {mean('pack_ms'):.3f}  "
          f"net {mean('net_ms'):.3f}  server {mean('server_ms'):.3f}  total {mean('total_ms'):.3f}")
    print(f"  平均上行字节: {mean('bytes_sent'):.0f}")
    if pipelined_report:
        print(f"  吞吐: {report.throughput:.2f}/s  稳态吞吐: {report.steady_throughput:.2f}/s")
        print("  阶段占用率: " + "  ".join(f"{k} {v:.0%}" for k, v in report.occupancy.items()))
    return 0


def cmd_sweep(args, config: DynoConfig) -> int:
    profile = ProfileDB.load(config.get('profiler.profile_file'))
    spec_args = {
        'axis': args.axis,
        'points': args.points,
        'link': config.get('network.type'),
        'constraints': config.get('scheduler.hard') or [],
        'targets': config.get('scheduler.soft') or ['min:latency'],
        'pipelined': config.get('scheduler.pipelined', False),
        'live': args.live,
        'requests_per_point': args.requests or config.get('sweep.requests_per_point', 20),
        'output': args.out or config.get('sweep.output'),
    }
    if args.variants:
        spec_args['variants'] = args.variants
    try:
        spec = SweepSpec(**spec_args)
    except ValueError as e:
        raise ConfigError(f"扫描参数无效: {e}") from e

    live = None
    if spec.live:
        graph, weights = _load_model(config)
        live = LiveContext(
            graph, weights,
            make_inputs(graph[graph.input_id].params['shape'], 8, seed=config.get('model.seed', 0)),
            codec=get_codec(config.get('ispm.codec', 'lz4')).codec_id,
        )
    rows = run_sweep(spec, profile, config.link_models(), live)
    write_csv(rows, spec.output)
    print(f"扫描完成: {len(rows)} 行 -> {spec.output}")
    return 0


def cmd_pack(args, config: DynoConfig) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"张量文件不存在: {path}")
    tensor = np.load(path).astype(np.float32)
    policy = PackingPolicy.of(args.bitwidth, args.codec)
    packed = pack(tensor, policy)
    data = packed.to_bytes()

    out = Path(args.out or f"{path}.ispm")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)

    restored = unpack(packed)
    max_err = float(np.max(np.abs(restored - tensor))) if tensor.size else 0.0
    bound = error_bound(float(tensor.min()), float(tensor.max()), args.bitwidth) if tensor.size else 0.0
    print(f"已打包: {out}")
    print(f"  压缩比: {4 * tensor.size / len(data):.2f}x ({4 * tensor.size}B -> {len(data)}B)")
    print(f"  最大重建误差: {max_err:.6g}（解析上界 {bound:.6g}）")
    return 0


def cmd_unpack(args, config: DynoConfig) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"打包文件不存在: {path}")
    packed, end = PackedTensor.from_bytes(path.read_bytes())
    tensor = unpack(packed)
    out = Path(args.out or f"{path}.npy")
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, tensor)
    print(f"已解包: {out} 形状 {tensor.shape} 位宽 {packed.bitwidth}")
    return 0


COMMANDS = {
    'make-model': cmd_make_model,
    'profile': cmd_profile,
    'report': cmd_report,
    'serve': cmd_serve,
    'infer': cmd_infer,
    'run-pipelined': lambda args, config: cmd_infer(args, config, pipelined_report=True),
    'sweep': cmd_sweep,
    'pack': cmd_pack,
    'unpack': cmd_unpack,
}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    parser = create_parser()
    args = parser.parse_args(argv)

    try:
        if args.create_config:
            DynoConfig().create_default_config_file(args.create_config)
            print(f"默认配置文件已创建: {args.create_config}")
            return 0

        if not args.command:
            parser.print_help()
            return 1

        config = _load_config(args)
        config.setup_logging(args.config, to_file=not args.no_log_file)
        return COMMANDS[args.command](args, config)

    except KeyboardInterrupt:
        print("\n已被用户中断", file=sys.stderr)
        return 1
    except (DynoError, OSError) as e:
        print(f"错误: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"发生错误: {e}", file=sys.stderr)
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
