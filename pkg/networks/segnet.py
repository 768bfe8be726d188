"""
双流前掩码条件全卷积分割网络
视觉流输入 RGB + 前掩码（4 通道），运动流输入 K 个堆叠光流 + 前掩码（2K+1 通道）
两个流在 pool3 / pool4 / pool5 三个层级按通道拼接（早期融合），
按 FCN8s 的跳跃连接方式逐级上采样，输出 2 通道 softmax（背景, 前景）
第五阶段不做下采样，最深特征步长为 16
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence as Seq, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ConfigError, ShapeError
from core.types import FlowField, Frame, Mask

STREAMS = ('visual', 'motion')
DEEPEST_STRIDE = 16


@dataclass
class SegNetConfig:
    """分割网络结构配置"""

    width: int = 64
    height: int = 64
    flow_stack: int = 5
    stage_widths: Tuple[int, ...] = (16, 32, 64, 64, 64)
    head_channels: int = 64
    streams: Tuple[str, ...] = STREAMS

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.streams = tuple(self.streams)

    @property
    def visual_channels(self) -> int:
        return 3 + 1

    @property
    def motion_channels(self) -> int:
        return 2 * self.flow_stack + 1

    @property
    def feature_channels(self) -> int:
        """每个流最深层特征的通道数 F"""
        return self.stage_widths[4]

    @property
    def grid(self) -> Tuple[int, int]:
        """最深特征网格 (H/16, W/16)"""
        return self.height // DEEPEST_STRIDE, self.width // DEEPEST_STRIDE

    def validate(self):
        if self.width <= 0 or self.height <= 0 or self.width % DEEPEST_STRIDE or self.height % DEEPEST_STRIDE:
            raise ConfigError(f"输入尺寸 {self.width}x{self.height} 必须为正且能被 {DEEPEST_STRIDE} 整除")
        if self.flow_stack < 1:
            raise ConfigError(f"flow_stack 必须 >= 1，实际为 {self.flow_stack}")
        if len(self.stage_widths) != 5 or any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage_widths 必须是 5 个正整数: {self.stage_widths}")
        if self.head_channels < 1:
            raise ConfigError(f"head_channels 必须为正: {self.head_channels}")
        unknown = [s for s in self.streams if s not in STREAMS]
        if unknown or not self.streams:
            raise ConfigError(f"streams 至少包含 visual/motion 之一，未知取值: {unknown}")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['stage_widths'] = list(self.stage_widths)
        data['streams'] = list(self.streams)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'SegNetConfig':
        return cls(
            width=int(data['width']),
            height=int(data['height']),
            flow_stack=int(data['flow_stack']),
            stage_widths=tuple(data['stage_widths']),
            head_channels=int(data['head_channels']),
            streams=tuple(data['streams']),
        )


def conv_block(in_channels: int, out_channels: int, kernel_size: int = 3) -> nn.Sequential:
    """卷积 + 批归一化 + ReLU"""
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True),
    )


class StreamEncoder(nn.Module):
    """单个流的五阶段卷积骨干，返回 pool3 / pool4 / pool5 特征"""

    def __init__(self, in_channels: int, stage_widths: Seq[int]):
        super().__init__()
        stages = []
        channels = in_channels
        for i, width in enumerate(stage_widths):
            layers = [conv_block(channels, width), conv_block(width, width)]
            # 前四个阶段各下采样一次，第五阶段保持步长 16
            if i < 4:
                layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            stages.append(nn.Sequential(*layers))
            channels = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features[2], features[3], features[4]


def bilinear_kernel(channels: int, kernel_size: int) -> torch.Tensor:
    """转置卷积的双线性上采样初始化（FCN 的做法）"""
    factor = (kernel_size + 1) // 2
    center = factor - 1 if kernel_size % 2 == 1 else factor - 0.5
    og = np.ogrid[:kernel_size, :kernel_size]
    filt = (1 - abs(og[0] - center) / factor) * (1 - abs(og[1] - center) / factor)
    weight = np.zeros((channels, channels, kernel_size, kernel_size), dtype=np.float32)
    for c in range(channels):
        weight[c, c] = filt
    return torch.from_numpy(weight)


@dataclass
class SegOutput:
    """分割网络输出"""

    probs: torch.Tensor
    fused: Dict[str, torch.Tensor] = field(default_factory=dict)
    spatial: Optional[torch.Tensor] = None
    temporal: Optional[torch.Tensor] = None

    @property
    def foreground(self) -> torch.Tensor:
        return self.probs[:, 1]

    @property
    def deepest(self) -> torch.Tensor:
        """最深融合特征 (N, 2F, H/16, W/16)"""
        return self.fused['pool5']


class SegNet(nn.Module):
    """双流 FCN8s 式分割网络"""

    def __init__(self, config: SegNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.stage_widths

        self.visual = StreamEncoder(config.visual_channels, widths) if 'visual' in config.streams else None
        self.motion = StreamEncoder(config.motion_channels, widths) if 'motion' in config.streams else None

        self.fc = nn.Sequential(
            nn.Conv2d(2 * widths[4], config.head_channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(config.head_channels, config.head_channels, 1),
            nn.ReLU(inplace=True),
        )
        self.score_pool5 = nn.Conv2d(config.head_channels, 2, 1)
        self.score_pool4 = nn.Conv2d(2 * widths[3], 2, 1)
        self.score_pool3 = nn.Conv2d(2 * widths[2], 2, 1)
        self.upscore2 = nn.ConvTranspose2d(2, 2, kernel_size=4, stride=2, padding=1, bias=False)
        self.upscore8 = nn.ConvTranspose2d(2, 2, kernel_size=16, stride=8, padding=4, bias=False)

        with torch.no_grad():
            self.upscore2.weight.copy_(bilinear_kernel(2, 4))
            self.upscore8.weight.copy_(bilinear_kernel(2, 16))

    def _stream_features(self, encoder: Optional[StreamEncoder], x: torch.Tensor):
        if encoder is not None:
            return encoder(x)
        # 关闭的流以全零特征参与融合，输出形状不变
        n, _, h, w = x.shape
        widths = self.config.stage_widths
        return (
            x.new_zeros(n, widths[2], h // 8, w // 8),
            x.new_zeros(n, widths[3], h // 16, w // 16),
            x.new_zeros(n, widths[4], h // 16, w // 16),
        )

    def forward(self, visual_in: torch.Tensor, motion_in: torch.Tensor) -> SegOutput:
        check_inputs(self.config, visual_in, motion_in)
        v3, v4, v5 = self._stream_features(self.visual, visual_in)
        m3, m4, m5 = self._stream_features(self.motion, motion_in)

        fused3 = torch.cat([v3, m3], dim=1)
        fused4 = torch.cat([v4, m4], dim=1)
        fused5 = torch.cat([v5, m5], dim=1)

        score = self.score_pool5(self.fc(fused5)) + self.score_pool4(fused4)
        score = self.upscore2(score) + self.score_pool3(fused3)
        logits = self.upscore8(score)
        probs = F.softmax(logits, dim=1)

        return SegOutput(
            probs=probs,
            fused={'pool3': fused3, 'pool4': fused4, 'pool5': fused5},
            spatial=v5,
            temporal=m5,
        )


def check_inputs(config: SegNetConfig, visual_in: torch.Tensor, motion_in: torch.Tensor):
    """检查输入形状与前掩码通道是否为二值"""
    expected = {
        'visual_in': (config.visual_channels, config.height, config.width),
        'motion_in': (config.motion_channels, config.height, config.width),
    }
    for name, tensor in (('visual_in', visual_in), ('motion_in', motion_in)):
        if tensor.dim() != 4 or tuple(tensor.shape[1:]) != expected[name]:
            raise ShapeError(f"{name} 形状应为 (N, {', '.join(map(str, expected[name]))})，实际为 {tuple(tensor.shape)}")
    if visual_in.shape[0] != motion_in.shape[0]:
        raise ShapeError(f"visual_in 与 motion_in 的批大小不一致: {visual_in.shape[0]} vs {motion_in.shape[0]}")
    for name, channel in (('visual_in', visual_in[:, -1]), ('motion_in', motion_in[:, -1])):
        if not torch.all((channel == 0) | (channel == 1)):
            raise ShapeError(f"{name} 的前掩码通道必须为二值")


def build_network(config: SegNetConfig, init_seed: int = 0) -> SegNet:
    """按种子确定性地构建网络"""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        net = SegNet(config)
    return net


def forward(net: SegNet, visual_in: torch.Tensor, motion_in: torch.Tensor, train_mode: bool = False) -> SegOutput:
    """前向计算；train_mode 控制批归一化的统计方式"""
    net.train(train_mode)
    return net(visual_in, motion_in)


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def frame_tensor(frame: Frame) -> torch.Tensor:
    """(H, W, 3) -> (3, H, W)"""
    return torch.from_numpy(np.ascontiguousarray(frame.data.transpose(2, 0, 1)))


def flow_stack_tensor(flows: Seq[FlowField], t: int, flow_stack: int, height: int, width: int) -> torch.Tensor:
    """第 t 帧之前最近的 K 个光流（t-K→…→t），按时间先后排列，不足部分补零"""
    channels = []
    for i in range(t - flow_stack, t):
        if 0 <= i < len(flows):
            channels.append(torch.from_numpy(np.ascontiguousarray(flows[i].data.transpose(2, 0, 1))))
        else:
            channels.append(torch.zeros(2, height, width))
    return torch.cat(channels, dim=0)


def assemble_inputs(frames: Seq[Frame], flows: Seq[FlowField], t: int, pre_mask: Mask,
                    flow_stack: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """组装第 t 帧的两路输入（只使用 <= t 的帧与光流）"""
    frame = frames[t]
    if (pre_mask.height, pre_mask.width) != (frame.height, frame.width):
        raise ShapeError(f"前掩码尺寸 {pre_mask.width}x{pre_mask.height} 与帧尺寸 {frame.width}x{frame.height} 不一致")
    mask = torch.from_numpy(pre_mask.data.astype(np.float32))[None]
    visual = torch.cat([frame_tensor(frame), mask], dim=0)
    motion = torch.cat([flow_stack_tensor(flows, t, flow_stack, frame.height, frame.width), mask], dim=0)
    return visual, motion
