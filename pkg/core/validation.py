"""
栅格工具与序列校验
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from core.errors import ParameterError
from core.types import CameraKind, Mask, Sequence, SoftMask

DEFAULT_THRESHOLD = 0.5

FLOW_COUNT = 'flow count'
WEARER_VISIBLE = 'wearer visible in own view'
RASTER_SIZE = 'raster size'
MISSING_WEARER = 'missing wearer identity'
INSTANCE_FRAME = 'instance frame index'


@dataclass(frozen=True)
class Violation:
    """一条不变量违例"""

    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def threshold_mask(soft: SoftMask, tau: float = DEFAULT_THRESHOLD) -> Mask:
    """二值化：概率 >= tau 的像素置 1（边界包含）"""
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"阈值 tau 必须位于 (0,1)，实际为 {tau}")
    return Mask((soft.data >= tau).astype(np.uint8))


def validate_sequence(seq: Sequence) -> List[Violation]:
    """返回序列违反的所有不变量；空列表表示合法"""
    violations = []

    if len(seq.flows) != len(seq.frames) - 1:
        violations.append(Violation(
            FLOW_COUNT, f"{len(seq.frames)} 帧应有 {len(seq.frames) - 1} 个光流场，实际为 {len(seq.flows)}"
        ))

    if seq.frames:
        height, width = seq.frames[0].height, seq.frames[0].width
        for t, frame in enumerate(seq.frames):
            if (frame.height, frame.width) != (height, width):
                violations.append(Violation(RASTER_SIZE, f"第 {t} 帧尺寸 {frame.width}x{frame.height}"))
        for t, flow in enumerate(seq.flows):
            if (flow.height, flow.width) != (height, width):
                violations.append(Violation(RASTER_SIZE, f"第 {t} 个光流场尺寸 {flow.width}x{flow.height}"))
        for t, frame_instances in enumerate(seq.instances):
            for inst in frame_instances:
                if inst.gt_mask is not None and (inst.gt_mask.height, inst.gt_mask.width) != (height, width):
                    violations.append(Violation(
                        RASTER_SIZE, f"第 {t} 帧身份 {inst.identity} 的掩码尺寸 {inst.gt_mask.width}x{inst.gt_mask.height}"
                    ))

    if len(seq.instances) > len(seq.frames):
        violations.append(Violation(
            INSTANCE_FRAME, f"实例列表覆盖 {len(seq.instances)} 帧，序列只有 {len(seq.frames)} 帧"
        ))
    for t, frame_instances in enumerate(seq.instances):
        for inst in frame_instances:
            if inst.frame_index != t or inst.frame_index >= len(seq.frames):
                violations.append(Violation(
                    INSTANCE_FRAME, f"身份 {inst.identity} 的帧序号 {inst.frame_index} 与位置 {t} 不一致"
                ))

    if seq.camera_kind == CameraKind.FIRST_PERSON:
        if seq.wearer_identity is None:
            violations.append(Violation(MISSING_WEARER, f"第一人称视角 {seq.view_id} 未设置佩戴者"))
        else:
            for t, frame_instances in enumerate(seq.instances):
                if any(inst.identity == seq.wearer_identity for inst in frame_instances):
                    violations.append(Violation(
                        WEARER_VISIBLE, f"视角 {seq.view_id} 第 {t} 帧出现了佩戴者 {seq.wearer_identity}"
                    ))

    return violations
