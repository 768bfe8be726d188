"""
推理流程
- 逐帧传播：第 t 帧的前掩码为第 t-1 帧预测的二值化结果，第 0 帧用真值
- Copy First 基线：把第 0 帧真值复制到所有帧
- 跨视角匹配：每个人（或第一人称相机）只嵌入一次，再计算全部距离
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence as Seq, Tuple

import numpy as np
import torch

from core.errors import EmptyDatasetError, ParameterError, ShapeError
from core.types import FlowField, Frame, Mask, Problem, Sequence, SoftMask
from core.validation import DEFAULT_THRESHOLD, threshold_mask
from networks.matchnet import AGGREGATIONS, MatchHead, box_masks, first_person_inputs, window_distance
from networks.segnet import SegNet, assemble_inputs, forward


@dataclass(frozen=True, eq=False)
class PropagationResult:
    """某人在某视角中逐帧的软掩码与二值掩码"""

    soft_masks: Tuple[SoftMask, ...]
    masks: Tuple[Mask, ...]

    def __post_init__(self):
        if len(self.soft_masks) != len(self.masks):
            raise ShapeError(f"软掩码 {len(self.soft_masks)} 帧与二值掩码 {len(self.masks)} 帧不一致")

    @property
    def num_frames(self) -> int:
        return len(self.masks)

    def same_as(self, other: 'PropagationResult') -> bool:
        """逐帧逐像素完全相同"""
        if self.num_frames != other.num_frames:
            return False
        return all(
            np.array_equal(a.data, b.data) and np.array_equal(sa.data, sb.data)
            for a, b, sa, sb in zip(self.masks, other.masks, self.soft_masks, other.soft_masks)
        )


def propagate_sequence(net: SegNet, frames: Seq[Frame], flows: Seq[FlowField], first_mask: Mask,
                       threshold: float = DEFAULT_THRESHOLD) -> PropagationResult:
    """
    逐帧传播某个人的掩码（因果：第 t 帧只用到 <= t 的帧与光流）
    """
    if len(flows) != len(frames) - 1:
        raise ShapeError(f"光流数 {len(flows)} 应为帧数 {len(frames)} 减一")
    if not frames:
        raise ShapeError("序列为空")
    if (first_mask.height, first_mask.width) != (frames[0].height, frames[0].width):
        raise ShapeError(f"首帧掩码尺寸 {first_mask.width}x{first_mask.height} 与帧尺寸不一致")

    flow_stack = net.config.flow_stack
    soft_masks = [first_mask.to_soft()]
    masks = [first_mask]
    with torch.no_grad():
        for t in range(1, len(frames)):
            visual, motion = assemble_inputs(frames, flows, t, masks[t - 1], flow_stack)
            output = forward(net, visual[None], motion[None], train_mode=False)
            soft = SoftMask.from_probs(output.probs[0].cpu().numpy())
            soft_masks.append(soft)
            masks.append(threshold_mask(soft, threshold))
    return PropagationResult(tuple(soft_masks), tuple(masks))


def copy_first_baseline(first_mask: Mask, num_frames: int) -> PropagationResult:
    """Copy First 基线"""
    if num_frames < 1:
        raise ParameterError(f"帧数必须 >= 1，实际为 {num_frames}")
    soft = first_mask.to_soft()
    return PropagationResult(tuple([soft] * num_frames), tuple([first_mask] * num_frames))


def propagate_view(net: Optional[SegNet], seq: Sequence, threshold: float = DEFAULT_THRESHOLD,
                   baseline: Optional[str] = None) -> Dict[int, PropagationResult]:
    """对某视角第 0 帧可见的每个人做传播；baseline='copy-first' 时不需要网络"""
    results = {}
    for identity in seq.identities_at(0):
        first_mask = seq.gt_mask(0, identity)
        if baseline == 'copy-first':
            results[identity] = copy_first_baseline(first_mask, seq.num_frames)
        else:
            results[identity] = propagate_sequence(net, seq.frames, seq.flows, first_mask, threshold)
    return results


class BaseEmbedder(ABC):
    """
    嵌入器基类
    子类实现第三人称一侧与第一人称一侧的窗口嵌入，返回逐帧嵌入 (T, C, h, w)
    """

    def __init__(self):
        self.forward_passes = 0

    @abstractmethod
    def embed_person(self, seq: Sequence, identity: int, propagation: PropagationResult) -> torch.Tensor:
        """第三人称视角中某个人在整个窗口上的逐帧嵌入"""
        pass

    @abstractmethod
    def embed_first_person(self, seq: Sequence) -> torch.Tensor:
        """第一人称相机在整个窗口上的逐帧嵌入"""
        pass


class NetworkEmbedder(BaseEmbedder):
    """用分割网络 + 匹配分支计算嵌入，每个人/相机一次批量前向"""

    def __init__(self, net: SegNet, match_head: MatchHead):
        super().__init__()
        self.net = net
        self.match_head = match_head

    def embed_person(self, seq: Sequence, identity: int, propagation: PropagationResult) -> torch.Tensor:
        flow_stack = self.net.config.flow_stack
        visuals, motions, boxes = [], [], []
        for t in range(seq.num_frames):
            pre_mask = propagation.masks[max(t - 1, 0)]
            visual, motion = assemble_inputs(seq.frames, seq.flows, t, pre_mask, flow_stack)
            visuals.append(visual)
            motions.append(motion)
            boxes.append(seq.gt_mask(t, identity).bounding_box())

        self.match_head.eval()
        with torch.no_grad():
            output = forward(self.net, torch.stack(visuals), torch.stack(motions), train_mode=False)
            embeddings = self.match_head.embed_output(output, box_masks(boxes, seq.height, seq.width))
        self.forward_passes += 1
        return embeddings

    def embed_first_person(self, seq: Sequence) -> torch.Tensor:
        flow_stack = self.net.config.flow_stack
        inputs = [first_person_inputs(seq.frames, seq.flows, t, flow_stack) for t in range(seq.num_frames)]
        self.match_head.eval()
        with torch.no_grad():
            embeddings = self.match_head.embed_first_person(
                torch.stack([frame for frame, _ in inputs]),
                torch.stack([flow for _, flow in inputs]),
            )
        self.forward_passes += 1
        return embeddings


@dataclass(frozen=True, eq=False)
class MatchResult:
    """距离矩阵：行为查询，列为候选"""

    distances: np.ndarray
    query_ids: Tuple[int, ...]
    candidate_ids: Tuple[int, ...]
    problem: Problem
    scene_id: str = ''
    query_view: str = ''
    candidate_view: str = ''

    def __post_init__(self):
        distances = np.asarray(self.distances, dtype=np.float64)
        if distances.shape != (len(self.query_ids), len(self.candidate_ids)):
            raise ShapeError(f"距离矩阵形状 {distances.shape} 与查询 {len(self.query_ids)} / 候选 "
                             f"{len(self.candidate_ids)} 数不一致")
        if not np.all(np.isfinite(distances)) or np.any(distances < 0):
            raise ParameterError("距离必须有限且非负")
        object.__setattr__(self, 'distances', distances)

    def labels(self) -> np.ndarray:
        """(查询, 候选) 身份是否一致"""
        return np.array([[int(q == c) for c in self.candidate_ids] for q in self.query_ids], dtype=np.int64)

    def to_dict(self) -> Dict:
        return {
            'problem': self.problem.value,
            'scene_id': self.scene_id,
            'query_view': self.query_view,
            'candidate_view': self.candidate_view,
            'query_ids': list(self.query_ids),
            'candidate_ids': list(self.candidate_ids),
            'distances': self.distances.tolist(),
        }


def match_views(embedder: BaseEmbedder, view_a: Sequence, view_b: Sequence, problem,
                propagated_a: Dict[int, PropagationResult],
                propagated_b: Optional[Dict[int, PropagationResult]] = None,
                aggregation: str = 'mean') -> MatchResult:
    """
    两个视角之间的匹配

    third_third：行为 view_a 中的人，列为 view_b 中的人
    third_first：view_b 为第一人称序列，行为该相机（身份 = 佩戴者），列为 view_a 中的人
    只考虑第 0 帧可见（即有传播结果）的人
    """
    problem = Problem.parse(problem)
    if aggregation not in AGGREGATIONS:
        raise ParameterError(f"未知的时间聚合方式: {aggregation}")

    candidates_a = sorted(propagated_a)
    embeddings_a = {identity: embedder.embed_person(view_a, identity, propagated_a[identity])
                    for identity in candidates_a}

    if problem == Problem.THIRD_THIRD:
        if propagated_b is None:
            raise ParameterError("third_third 匹配需要 view_b 的传播结果")
        candidates_b = sorted(propagated_b)
        if not candidates_a or not candidates_b:
            raise EmptyDatasetError(f"{view_a.view_id} 与 {view_b.view_id} 之间没有候选匹配")
        embeddings_b = {identity: embedder.embed_person(view_b, identity, propagated_b[identity])
                        for identity in candidates_b}
        distances = [[window_distance(embeddings_a[qa], embeddings_b[cb], aggregation) for cb in candidates_b]
                     for qa in candidates_a]
        return MatchResult(np.array(distances, dtype=np.float64).reshape(len(candidates_a), len(candidates_b)),
                           tuple(candidates_a), tuple(candidates_b), problem,
                           view_a.scene_id, view_a.view_id, view_b.view_id)

    if not view_b.is_first_person or view_b.wearer_identity is None:
        raise ParameterError(f"third_first 匹配要求 {view_b.view_id} 为第一人称序列")
    if not candidates_a:
        raise EmptyDatasetError(f"{view_a.view_id} 中没有可与 {view_b.view_id} 匹配的人")
    camera = embedder.embed_first_person(view_b)
    distances = [[window_distance(camera, embeddings_a[identity], aggregation) for identity in candidates_a]]
    return MatchResult(np.array(distances, dtype=np.float64), (view_b.wearer_identity,), tuple(candidates_a),
                       problem, view_a.scene_id, view_b.view_id, view_a.view_id)
