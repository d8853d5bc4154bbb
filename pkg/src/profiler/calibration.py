"""
离线校准
对校准集做一次完整前向传播并缓存所有节点输出，
再对每个 <切分点, 位宽> 打包依赖、恢复后在服务端区间重新执行，统计大小、耗时与精度损失
"""
import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..engine.executor import ExecPlan, execute, forward_all
from ..graph.dep_graph import DepGraph
from ..graph.model_io import ModelWeights
from ..ispm.codecs import CodecId
from ..ispm.packing import PackingPolicy, pack, pack_dependencies, serialized_size, unpack_dependencies
from ..ispm.quantization import PASSTHROUGH
from .profile_db import ProfileDB

logger = logging.getLogger("dyno-profiler")


def profile_layers(
    g: DepGraph, weights: ModelWeights, inputs: Sequence[np.ndarray], repeats: int = 1
) -> Dict[int, float]:
    """逐层耗时均值 (ms)"""
    totals = {node.id: 0.0 for node in g.nodes}
    runs = 0
    for _ in range(repeats):
        for x in inputs:
            timings: Dict[int, float] = {}
            forward_all(g, weights, x, timings=timings)
            for nid, ms in timings.items():
                totals[nid] += ms
            runs += 1
    return {nid: total / runs for nid, total in totals.items()}


def calibrate(
    g: DepGraph,
    weights: ModelWeights,
    calibration_inputs: Sequence[np.ndarray],
    splits: Sequence[int],
    bitwidths: Sequence[int],
    unit: str = 'cpu',
    codec: CodecId = CodecId.LZ4,
    server_speedup: float = 1.0,
    server_timings: Optional[Dict[int, float]] = None,
) -> ProfileDB:
    """
    构建剖析表

    Args:
        server_speedup: 未提供 server_timings 时，服务端每层耗时取客户端耗时除以该加速比
        server_timings: 在服务端处理单元上测得的逐层耗时
    """
    if not calibration_inputs:
        raise ValueError("校准集不能为空")
    if server_speedup <= 0:
        raise ValueError(f"server_speedup 必须大于 0: {server_speedup}")

    count = len(calibration_inputs)
    splits = sorted(set(int(s) for s in splits))
    bitwidths = sorted(set(int(b) for b in bitwidths))
    for s in splits:
        g.split_dependencies(s)

    logger.info(f"开始校准 {g.name}: {count} 个输入, {len(splits)} 个切分点, {len(bitwidths)} 种位宽")
    start = time.perf_counter()

    layer_totals = {node.id: 0.0 for node in g.nodes}
    cached: List[Dict[int, np.ndarray]] = []
    reference_top1: List[int] = []
    for x in calibration_inputs:
        timings: Dict[int, float] = {}
        outputs = forward_all(g, weights, x, timings=timings)
        for nid, ms in timings.items():
            layer_totals[nid] += ms
        cached.append(outputs)
        reference_top1.append(int(np.argmax(outputs[g.output_id])))
    layer_times = {nid: total / count for nid, total in layer_totals.items()}

    db = ProfileDB(
        model_name=g.name,
        N=g.N,
        splits=splits,
        bitwidths=bitwidths,
        unit=unit,
        calibration_count=count,
    )
    db.set_unit_timings(unit, layer_times)
    # 服务端以 PASSTHROUGH 不压缩返回 logits
    db.d_response = float(pack(cached[0][g.output_id], PackingPolicy(PASSTHROUGH, CodecId.NONE)).nbytes)
    if server_timings is not None:
        db.t_server = {int(k): float(v) for k, v in server_timings.items()}
    else:
        db.t_server = {nid: ms / server_speedup for nid, ms in layer_times.items()}

    for s in splits:
        dep_ids = g.split_dependencies(s).dep_ids
        db.t_pack[s], db.d_size[s], db.acc_delta[s] = {}, {}, {}
        for b in bitwidths:
            if not dep_ids:
                # 仅客户端执行，没有需要传输的依赖
                db.t_pack[s][b] = 0.0
                db.d_size[s][b] = 0.0
                db.acc_delta[s][b] = 0.0
                continue

            policy = PackingPolicy(bitwidth=b, codec=codec)
            pack_ms, size, agree = 0.0, 0, 0
            for outputs, top1 in zip(cached, reference_top1):
                t0 = time.perf_counter()
                packed = pack_dependencies(outputs, dep_ids, policy)
                pack_ms += (time.perf_counter() - t0) * 1000.0
                size += serialized_size(packed)
                if b == PASSTHROUGH:
                    continue
                restored = unpack_dependencies(packed)
                logits = execute(g, weights, ExecPlan.server(g, s, restored))[g.output_id]
                agree += int(np.argmax(logits)) == top1

            db.t_pack[s][b] = pack_ms / count
            db.d_size[s][b] = size / count
            # PASSTHROUGH 无损，精度损失恒为 0
            db.acc_delta[s][b] = 0.0 if b == PASSTHROUGH else 100.0 * (1.0 - agree / count)

        logger.debug(f"切分点 {s} 校准完成: acc_delta={db.acc_delta[s]}")

    logger.info(f"校准完成，耗时 {time.perf_counter() - start:.2f}s")
    return db


@dataclass
class CompressionRow:
    """单个节点输出的压缩情况"""
    node_id: int
    kind: str
    float_bytes: int
    packed_bytes: float

    @property
    def ratio(self) -> float:
        return self.float_bytes / self.packed_bytes if self.packed_bytes else float('inf')


def compression_report(
    g: DepGraph,
    weights: ModelWeights,
    inputs: Sequence[np.ndarray],
    bitwidth: int,
    codec: CodecId = CodecId.LZ4,
) -> List[CompressionRow]:
    """每个节点输出在给定位宽下的平均压缩比（float32 字节数 / 打包后字节数）"""
    policy = PackingPolicy(bitwidth=bitwidth, codec=codec)
    sizes = {node.id: 0 for node in g.nodes}
    float_bytes: Dict[int, int] = {}
    for x in inputs:
        outputs = forward_all(g, weights, x)
        for nid, t in outputs.items():
            float_bytes[nid] = 4 * t.size
            sizes[nid] += pack(t, policy, dep_id=nid).nbytes

    return [
        CompressionRow(
            node_id=node.id,
            kind=node.kind,
            float_bytes=float_bytes[node.id],
            packed_bytes=sizes[node.id] / len(inputs),
        )
        for node in g.nodes
    ]
