"""
评估指标：IoU、检索 mAP、强制选择准确率、PR 曲线
距离相同的条目一律按输入顺序（稳定排序）处理
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence as Seq, Tuple

import numpy as np

from core.errors import EmptyDatasetError, IntegrityError, ParameterError, ShapeError
from core.types import Mask


def iou(pred: Mask, gt: Mask) -> float:
    """交并比；两个掩码都为空时定义为 1.0"""
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"预测掩码尺寸 {pred.data.shape} 与真值尺寸 {gt.data.shape} 不一致")
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, g).sum()) / union


def rank_labels(distances: Seq[float], labels: Seq[int]) -> np.ndarray:
    """按距离升序（稳定）排列标签"""
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if distances.shape != labels.shape:
        raise ShapeError(f"距离 {distances.shape} 与标签 {labels.shape} 长度不一致")
    order = np.argsort(distances, kind='stable')
    return labels[order]


def average_precision(ranked_labels: Seq[int], interpolated: bool = False) -> float:
    """
    各正样本位置上的精度的均值
    interpolated=True 时每个位置的精度取其后（含）各位置精度的最大值
    """
    labels = np.asarray(ranked_labels, dtype=np.int64)
    num_positive = int(labels.sum())
    if num_positive == 0:
        raise ParameterError("没有正样本，AP 无定义")
    hits = np.cumsum(labels)
    precision = hits / np.arange(1, len(labels) + 1)
    if interpolated:
        precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(precision[labels == 1].sum() / num_positive)


def mean_average_precision(ranked_lists: Seq[Seq[int]], interpolated: bool = False) -> Tuple[float, int]:
    """对各查询的 AP 求均值；没有正样本的查询不计入，返回 (mAP, 跳过的查询数)"""
    values, skipped = [], 0
    for ranked in ranked_lists:
        if int(np.sum(ranked)) == 0:
            skipped += 1
            continue
        values.append(average_precision(ranked, interpolated))
    if not values:
        raise EmptyDatasetError("所有查询都没有正样本，mAP 无定义")
    return float(np.mean(values)), skipped


def forced_choice_counts(distances: np.ndarray, labels: np.ndarray) -> Tuple[int, int, int]:
    """
    每行选距离最小的候选（并列时取下标最小者）
    返回 (正确数, 计入的查询数, 因候选中没有正确匹配而排除的查询数)
    """
    distances = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if distances.size == 0:
        raise EmptyDatasetError("距离矩阵为空")
    if distances.shape != labels.shape:
        raise ShapeError(f"距离矩阵 {distances.shape} 与标签矩阵 {labels.shape} 形状不一致")
    correct = total = excluded = 0
    for row, row_labels in zip(distances, labels):
        if not row_labels.any():
            excluded += 1
            continue
        total += 1
        # np.argmin 在并列时返回第一个下标
        correct += int(row_labels[int(np.argmin(row))] == 1)
    return correct, total, excluded


def forced_choice_acc(result) -> float:
    """MatchResult 上的强制选择准确率"""
    correct, total, _ = forced_choice_counts(result.distances, result.labels())
    if total == 0:
        raise EmptyDatasetError("没有任何查询在候选中存在正确匹配")
    return correct / total


def pr_curve(distances: Seq[float], labels: Seq[int]) -> List[Tuple[float, float]]:
    """按距离升序逐个截断，输出 (precision@k, recall@k)，k = 1..N"""
    ranked = rank_labels(distances, labels)
    num_positive = int(ranked.sum())
    if num_positive == 0:
        raise ParameterError("没有正样本，无法计算 PR 曲线")
    hits = np.cumsum(ranked)
    ks = np.arange(1, len(ranked) + 1)
    return [(float(h / k), float(h / num_positive)) for h, k in zip(hits, ks)]


def iou_vs_length(iou_by_frame: Seq[float]) -> List[float]:
    """累计平均 IoU：第 i 项为序列长度 i+2（评估第 1..i+1 帧）时的平均值"""
    values = []
    running = 0.0
    for i, value in enumerate(iou_by_frame):
        running += value
        values.append(running / (i + 1))
    return values


@dataclass
class EvalReport:
    """评估报告"""

    problem: str
    model_id: str
    dataset_id: str
    mean_iou: float
    per_sequence_iou: Dict[str, float] = field(default_factory=dict)
    iou_by_frame: List[float] = field(default_factory=list)
    iou_by_length: List[float] = field(default_factory=list)
    mean_ap: Optional[float] = None
    acc: Optional[float] = None
    pr_points: List[Tuple[float, float]] = field(default_factory=list)
    skipped_ap_queries: int = 0
    excluded_acc_queries: int = 0
    num_queries: int = 0
    reweight_mode: str = ''
    baseline: str = ''
    interpolated_ap: bool = False
    created_at: str = ''
    data_root: str = ''
    split: str = ''
    predictions_dir: str = ''

    def __post_init__(self):
        for name in ('mean_iou', 'mean_ap', 'acc'):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} 必须位于 [0,1]，实际为 {value}")
        recalls = [r for _, r in self.pr_points]
        if any(b < a for a, b in zip(recalls, recalls[1:])):
            raise ParameterError("PR 曲线的召回率必须单调不减")
        self.pr_points = [tuple(point) for point in self.pr_points]

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['pr_points'] = [list(point) for point in self.pr_points]
        return data

    def save(self, filepath: str) -> str:
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        return filepath

    @classmethod
    def load(cls, filepath: str) -> 'EvalReport':
        try:
            with open(filepath, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise IntegrityError(f"无法读取评估报告 {filepath}: {e}")
        try:
            return cls(**data)
        except TypeError as e:
            raise IntegrityError(f"评估报告字段不完整 {filepath}: {e}")
