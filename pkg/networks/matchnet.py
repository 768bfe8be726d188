"""
跨视角匹配分支
- third_third：全孪生结构，两侧共用分割网络与嵌入卷积
- third_first：半孪生结构，第一人称一侧有自己的浅层卷积，只共享嵌入卷积
深层特征先用分割输出的软注意力重新加权，再拼接做嵌入
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence as Seq, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ConfigError, ParameterError, ShapeError
from core.types import FlowField, Frame, Problem
from networks.segnet import DEEPEST_STRIDE, SegNetConfig, SegOutput, StreamEncoder, flow_stack_tensor, frame_tensor

REWEIGHT_MODES = ('none', 'soft_attention', 'bounding_box')
AGGREGATIONS = ('mean', 'min')


@dataclass
class MatchConfig:
    """匹配分支配置"""

    problem: Problem = Problem.THIRD_THIRD
    reweight_mode: str = 'soft_attention'
    embed_channels: int = 128
    margin: float = 1.0
    head_depth: int = 2
    aggregation: str = 'mean'

    def __post_init__(self):
        self.problem = Problem.parse(self.problem)

    def validate(self):
        if self.reweight_mode not in REWEIGHT_MODES:
            raise ConfigError(f"未知的重加权方式: {self.reweight_mode}，可选 {', '.join(REWEIGHT_MODES)}")
        if self.margin <= 0:
            raise ConfigError(f"margin 必须为正，实际为 {self.margin}")
        if self.embed_channels < 1 or self.head_depth < 1:
            raise ConfigError(f"embed_channels / head_depth 必须为正: {self.embed_channels} / {self.head_depth}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"未知的时间聚合方式: {self.aggregation}")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['problem'] = self.problem.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'MatchConfig':
        return cls(
            problem=data.get('problem', Problem.THIRD_THIRD),
            reweight_mode=data.get('reweight_mode', 'soft_attention'),
            embed_channels=int(data.get('embed_channels', 128)),
            margin=float(data.get('margin', 1.0)),
            head_depth=int(data.get('head_depth', 2)),
            aggregation=data.get('aggregation', 'mean'),
        )


def box_masks(boxes: Seq[Optional[Tuple[int, int, int, int]]], height: int, width: int) -> torch.Tensor:
    """由 (x0, y0, x1, y1) 边界框（右下不含）生成 (N, 1, H, W) 二值掩码；None 表示空框"""
    masks = torch.zeros(len(boxes), 1, height, width)
    for i, box in enumerate(boxes):
        if box is None:
            continue
        x0, y0, x1, y1 = box
        masks[i, 0, y0:y1, x0:x1] = 1.0
    return masks


def _pooled_attention(attention: torch.Tensor, grid: Tuple[int, int]) -> torch.Tensor:
    pooled = F.avg_pool2d(attention, kernel_size=DEEPEST_STRIDE, stride=DEEPEST_STRIDE)
    if tuple(pooled.shape[-2:]) != tuple(grid):
        raise ShapeError(f"注意力图下采样后为 {tuple(pooled.shape[-2:])}，与特征网格 {tuple(grid)} 不一致")
    return pooled


def reweight(spatial: torch.Tensor, temporal: torch.Tensor, seg_probs: torch.Tensor, mode: str,
             problem, gt_box: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    用分割输出重新加权深层特征

    third_third 两个流都乘前景注意力；third_first 空间流乘背景注意力、时间流乘前景注意力
    注意力图按 16 倍平均池化后在通道维上广播

    Args:
        spatial, temporal: (N, F, H/16, W/16)
        seg_probs: (N, 2, H, W) softmax 输出（背景, 前景）
        gt_box: bounding_box 模式下的 (N, 1, H, W) 边界框掩码
    """
    problem = Problem.parse(problem)
    if mode not in REWEIGHT_MODES:
        raise ParameterError(f"未知的重加权方式: {mode}")
    if spatial.shape != temporal.shape:
        raise ShapeError(f"spatial 形状 {tuple(spatial.shape)} 与 temporal 形状 {tuple(temporal.shape)} 不一致")
    if seg_probs.dim() != 4 or seg_probs.shape[1] != 2:
        raise ShapeError(f"seg_probs 形状应为 (N, 2, H, W)，实际为 {tuple(seg_probs.shape)}")
    if mode == 'none':
        return spatial, temporal

    grid = spatial.shape[-2:]
    if mode == 'bounding_box':
        if gt_box is None:
            raise ParameterError("bounding_box 模式需要提供 gt_box")
        foreground = _pooled_attention(gt_box.to(spatial.dtype), grid)
        background = 1.0 - foreground
    else:
        foreground = _pooled_attention(seg_probs[:, 1:2], grid)
        background = _pooled_attention(seg_probs[:, 0:1], grid)

    if problem == Problem.THIRD_THIRD:
        return spatial * foreground, temporal * foreground
    return spatial * background, temporal * foreground


class EmbeddingHead(nn.Module):
    """嵌入卷积：每个流若干层卷积，拼接后再经一层卷积输出 C 通道"""

    def __init__(self, feature_channels: int, embed_channels: int = 128, depth: int = 2):
        super().__init__()
        self.spatial = self._branch(feature_channels, embed_channels, depth)
        self.temporal = self._branch(feature_channels, embed_channels, depth)
        self.fuse = nn.Conv2d(2 * embed_channels, embed_channels, 3, padding=1)

    @staticmethod
    def _branch(in_channels: int, out_channels: int, depth: int) -> nn.Sequential:
        layers = []
        channels = in_channels
        for _ in range(depth):
            layers += [nn.Conv2d(channels, out_channels, 3, padding=1), nn.ReLU(inplace=True)]
            channels = out_channels
        return nn.Sequential(*layers)

    def forward(self, spatial: torch.Tensor, temporal: torch.Tensor) -> torch.Tensor:
        if spatial.shape[-2:] != temporal.shape[-2:]:
            raise ShapeError(f"spatial 网格 {tuple(spatial.shape[-2:])} 与 temporal 网格 {tuple(temporal.shape[-2:])} 不一致")
        fused = torch.cat([self.spatial(spatial), self.temporal(temporal)], dim=1)
        return self.fuse(fused)


def embed(spatial: torch.Tensor, temporal: torch.Tensor, head: EmbeddingHead) -> torch.Tensor:
    """重加权后的两个特征块 -> (N, C, H/16, W/16) 嵌入"""
    return head(spatial, temporal)


class FirstPersonEncoder(nn.Module):
    """
    第一人称分支：结构同分割网络的两个流但没有上采样层
    浅层卷积独立，嵌入卷积与第三人称分支共享同一个对象
    """

    def __init__(self, seg_config: SegNetConfig, head: EmbeddingHead):
        super().__init__()
        self.seg_config = seg_config
        self.visual = StreamEncoder(3, seg_config.stage_widths)
        self.motion = StreamEncoder(2 * seg_config.flow_stack, seg_config.stage_widths)
        # 共享的嵌入卷积由 MatchHead 持有，这里不重复注册
        self._shared = (head,)

    @property
    def head(self) -> EmbeddingHead:
        return self._shared[0]

    def forward(self, frames_in: torch.Tensor, flows_in: torch.Tensor) -> torch.Tensor:
        cfg = self.seg_config
        expected = {
            'frames_in': (3, cfg.height, cfg.width),
            'flows_in': (2 * cfg.flow_stack, cfg.height, cfg.width),
        }
        for name, tensor in (('frames_in', frames_in), ('flows_in', flows_in)):
            if tensor.dim() != 4 or tuple(tensor.shape[1:]) != expected[name]:
                raise ShapeError(f"{name} 形状应为 (N, {', '.join(map(str, expected[name]))})，实际为 {tuple(tensor.shape)}")
        _, _, spatial = self.visual(frames_in)
        _, _, temporal = self.motion(flows_in)
        return self.head(spatial, temporal)


def first_person_inputs(frames: Seq[Frame], flows: Seq[FlowField], t: int,
                        flow_stack: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """第一人称窗口：第 t 帧 RGB 与截至 t 的 K 个光流"""
    frame = frames[t]
    return frame_tensor(frame), flow_stack_tensor(flows, t, flow_stack, frame.height, frame.width)


def forward_first_person(encoder: FirstPersonEncoder, frames_in: torch.Tensor, flows_in: torch.Tensor) -> torch.Tensor:
    """第一人称一侧的嵌入，不做注意力重加权"""
    return encoder(frames_in, flows_in)


class MatchHead(nn.Module):
    """匹配分支：嵌入卷积 +（third_first 时）第一人称编码器"""

    def __init__(self, seg_config: SegNetConfig, match_config: MatchConfig):
        super().__init__()
        match_config.validate()
        self.seg_config = seg_config
        self.config = match_config
        self.head = EmbeddingHead(seg_config.feature_channels, match_config.embed_channels, match_config.head_depth)
        if match_config.problem == Problem.THIRD_FIRST:
            self.fp_encoder = FirstPersonEncoder(seg_config, self.head)
        else:
            self.fp_encoder = None

    def embed_output(self, seg_output: SegOutput, gt_box: Optional[torch.Tensor] = None) -> torch.Tensor:
        """分割网络输出 -> 第三人称一侧嵌入"""
        spatial, temporal = reweight(seg_output.spatial, seg_output.temporal, seg_output.probs,
                                     self.config.reweight_mode, self.config.problem, gt_box)
        return embed(spatial, temporal, self.head)

    def embed_first_person(self, frames_in: torch.Tensor, flows_in: torch.Tensor) -> torch.Tensor:
        if self.fp_encoder is None:
            raise ConfigError("third_third 匹配分支没有第一人称编码器")
        return forward_first_person(self.fp_encoder, frames_in, flows_in)


def build_match_head(seg_config: SegNetConfig, match_config: MatchConfig, init_seed: int = 0) -> MatchHead:
    """按种子确定性地构建匹配分支"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed + 1)
        head = MatchHead(seg_config, match_config)
    return head


def aggregate_embeddings(embeddings: torch.Tensor) -> torch.Tensor:
    """窗口内逐帧嵌入 (T, C, h, w) 取均值"""
    if embeddings.dim() != 4 or embeddings.shape[0] == 0:
        raise ShapeError(f"嵌入序列形状应为 (T, C, h, w) 且 T>0，实际为 {tuple(embeddings.shape)}")
    return embeddings.mean(dim=0)


def window_distance(a: torch.Tensor, b: torch.Tensor, aggregation: str = 'mean') -> float:
    """
    两个窗口嵌入序列之间的距离
    mean：先各自取均值再算平方差之和；min：逐帧配对距离的最小值
    """
    if aggregation == 'mean':
        return float((aggregate_embeddings(a) - aggregate_embeddings(b)).pow(2).sum())
    if aggregation == 'min':
        diffs = (a.unsqueeze(1) - b.unsqueeze(0)).pow(2).flatten(2).sum(dim=2)
        return float(diffs.min())
    raise ParameterError(f"未知的时间聚合方式: {aggregation}")


