"""
数据集级评估
对每个测试窗口：逐人传播掩码并计算 IoU，再在视角之间做匹配并计算 mAP / ACC / PR
"""

import json
import os
from collections import defaultdict
from datetime import datetime
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image
from tqdm import tqdm

from core.errors import EmptyDatasetError, ParameterError
from core.types import Problem, Sequence
from networks.matchnet import MatchHead
from networks.segnet import SegNet
from processors.metrics import (
    EvalReport, forced_choice_counts, iou, iou_vs_length, mean_average_precision, pr_curve, rank_labels,
)
from processors.pipeline import BaseEmbedder, MatchResult, NetworkEmbedder, PropagationResult, match_views, propagate_view

BASELINES = ('copy-first',)


def split_windows(seq: Sequence, window_length: int) -> List[Tuple[int, Sequence]]:
    """按固定长度切成互不重叠的窗口；序列不足一个窗口时整体作为一个窗口"""
    if window_length < 2:
        raise ParameterError(f"窗口长度必须 >= 2，实际为 {window_length}")
    if seq.num_frames <= window_length:
        return [(0, seq)]
    return [(start, seq.window(start, start + window_length))
            for start in range(0, seq.num_frames - window_length + 1, window_length)]


def _save_masks(predictions_dir: str, key: str, result: PropagationResult):
    directory = os.path.join(predictions_dir, *key.split('/'))
    os.makedirs(directory, exist_ok=True)
    for t, mask in enumerate(result.masks):
        Image.fromarray((mask.data * 255).astype(np.uint8)).save(os.path.join(directory, f"mask_{t:04d}.png"))


def _window_pairs(views: Dict[str, Sequence], problem: Problem) -> List[Tuple[str, str]]:
    """third_third：所有视角两两组合；third_first：(第三人称视角, 第一人称视角)"""
    view_ids = sorted(views)
    if problem == Problem.THIRD_THIRD:
        return list(combinations(view_ids, 2))
    return [(other, fp) for fp in view_ids if views[fp].is_first_person
            for other in view_ids if other != fp]


def evaluate_dataset(dataset: Dict[str, Dict[str, Sequence]], problem, net: Optional[SegNet] = None,
                     match_head: Optional[MatchHead] = None, embedder: Optional[BaseEmbedder] = None,
                     baseline: Optional[str] = None, threshold: float = 0.5, window_length: int = 20,
                     aggregation: str = 'mean', interpolated_ap: bool = False,
                     predictions_dir: Optional[str] = None, model_id: str = '',
                     dataset_id: str = '') -> Tuple[EvalReport, List[MatchResult]]:
    """
    评估整个数据集

    Args:
        dataset: {scene_id: {view_id: Sequence}}
        baseline: 'copy-first' 时只评估分割（不需要网络，不做匹配）
        embedder: 为空且给出 match_head 时使用 NetworkEmbedder
        predictions_dir: 若给出则写出逐人掩码 PNG 与距离 JSON
    """
    problem = Problem.parse(problem)
    if baseline is not None and baseline not in BASELINES:
        raise ParameterError(f"未知的基线: {baseline}")
    if baseline is None and net is None:
        raise ParameterError("未指定基线时必须提供分割网络")
    if embedder is None and match_head is not None and baseline is None:
        embedder = NetworkEmbedder(net, match_head)

    sequence_iou: Dict[str, float] = {}
    frame_ious: Dict[int, List[float]] = defaultdict(list)
    results: List[MatchResult] = []

    for scene_id in tqdm(sorted(dataset), desc="评估场景", unit="scene"):
        views = dataset[scene_id]
        windows_by_view = {view_id: split_windows(seq, window_length) for view_id, seq in views.items()}
        num_windows = min(len(w) for w in windows_by_view.values())

        for w in range(num_windows):
            window_views = {view_id: windows[w][1] for view_id, windows in windows_by_view.items()}
            start = windows_by_view[sorted(views)[0]][w][0]
            propagated: Dict[str, Dict[int, PropagationResult]] = {}

            for view_id in sorted(window_views):
                seq = window_views[view_id]
                propagated[view_id] = propagate_view(net, seq, threshold, baseline)
                for identity, result in propagated[view_id].items():
                    key = f"{scene_id}/{view_id}/id{identity}@{start}"
                    values = [iou(result.masks[t], seq.gt_mask(t, identity)) for t in range(1, seq.num_frames)]
                    for t, value in enumerate(values, start=1):
                        frame_ious[t].append(value)
                    if values:
                        sequence_iou[key] = float(np.mean(values))
                    if predictions_dir:
                        _save_masks(predictions_dir, key.replace('@', '_w'), result)

            if embedder is None:
                continue
            for view_a, view_b in _window_pairs(window_views, problem):
                if problem == Problem.THIRD_THIRD:
                    if not propagated[view_a] or not propagated[view_b]:
                        continue
                    results.append(match_views(embedder, window_views[view_a], window_views[view_b], problem,
                                               propagated[view_a], propagated[view_b], aggregation))
                else:
                    if not propagated[view_a]:
                        continue
                    results.append(match_views(embedder, window_views[view_a], window_views[view_b], problem,
                                               propagated[view_a], aggregation=aggregation))

    if not sequence_iou:
        raise EmptyDatasetError("没有可评估的序列（第 0 帧没有可见的人）")

    iou_by_frame = [float(np.mean(frame_ious[t])) for t in sorted(frame_ious)]
    report = EvalReport(
        problem=problem.value,
        model_id=model_id,
        dataset_id=dataset_id,
        mean_iou=float(np.mean(list(sequence_iou.values()))),
        per_sequence_iou=sequence_iou,
        iou_by_frame=iou_by_frame,
        iou_by_length=iou_vs_length(iou_by_frame),
        reweight_mode=match_head.config.reweight_mode if match_head is not None else '',
        baseline=baseline or '',
        interpolated_ap=interpolated_ap,
        created_at=datetime.now().isoformat(),
    )

    if results:
        _fill_matching_metrics(report, results, interpolated_ap)
    if predictions_dir:
        os.makedirs(predictions_dir, exist_ok=True)
        with open(os.path.join(predictions_dir, 'distances.json'), 'w', encoding='utf-8') as f:
            json.dump([result.to_dict() for result in results], f, ensure_ascii=False, indent=2)

    return report, results


def _fill_matching_metrics(report: EvalReport, results: List[MatchResult], interpolated_ap: bool):
    ranked_lists, all_distances, all_labels = [], [], []
    correct = total = excluded = 0
    for result in results:
        labels = result.labels()
        for row, row_labels in zip(result.distances, labels):
            ranked_lists.append(rank_labels(row, row_labels))
            all_distances.extend(row.tolist())
            all_labels.extend(row_labels.tolist())
        c, n, e = forced_choice_counts(result.distances, labels)
        correct, total, excluded = correct + c, total + n, excluded + e

    report.num_queries = len(ranked_lists)
    report.excluded_acc_queries = excluded
    if total:
        report.acc = correct / total
    if any(all_labels):
        report.mean_ap, report.skipped_ap_queries = mean_average_precision(ranked_lists, interpolated_ap)
        report.pr_points = pr_curve(all_distances, all_labels)
    else:
        report.skipped_ap_queries = len(ranked_lists)
        print(" 警告: 所有查询都没有正确匹配，mAP 与 PR 曲线未计算")
