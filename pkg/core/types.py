"""
共享领域类型
坐标约定：原点在左上角，x 向右，y 向下；光流 (u, v) 为第 t 帧到第 t+1 帧的位移
所有栅格按行存储，形状为 (height, width[, channels])，构造后只读
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import ParameterError, ShapeError


class Problem(str, Enum):
    """匹配问题类型"""

    THIRD_THIRD = 'third_third'
    THIRD_FIRST = 'third_first'

    @classmethod
    def parse(cls, value: Union[str, 'Problem']) -> 'Problem':
        """解析命令行或配置中的写法（third-third / third_third）"""
        if isinstance(value, Problem):
            return value
        normalized = str(value).strip().lower().replace('-', '_')
        for problem in cls:
            if problem.value == normalized:
                return problem
        raise ParameterError(f"未知的问题类型: {value}")


class CameraKind(str, Enum):
    """相机类型"""

    THIRD_PERSON = 'third_person'
    FIRST_PERSON = 'first_person'


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Frame:
    """RGB 帧，取值范围 [0,1]"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ShapeError(f"Frame.data 形状应为 (H, W, 3)，实际为 {data.shape}")
        if data.shape[0] <= 0 or data.shape[1] <= 0:
            raise ShapeError(f"Frame 尺寸必须为正: {data.shape}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ParameterError("Frame 像素值必须位于 [0,1]")
        object.__setattr__(self, 'data', _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    @classmethod
    def from_uint8(cls, array: np.ndarray) -> 'Frame':
        """由 8 位 RGB 数组构造；渲染与 PNG 读取共用，保证逐位一致"""
        return cls(np.asarray(array, dtype=np.uint8).astype(np.float32) / np.float32(255.0))

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data * 255.0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class FlowField:
    """光流场，单位为像素/帧"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ShapeError(f"FlowField.data 形状应为 (H, W, 2)，实际为 {data.shape}")
        object.__setattr__(self, 'data', _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> 'FlowField':
        return cls(np.zeros((height, width, 2), dtype=np.float32))


@dataclass(frozen=True, eq=False)
class Mask:
    """二值分割掩码，取值严格为 {0,1}"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"Mask.data 应为二维，实际为 {data.shape}")
        if data.size and not np.isin(data, (0, 1)).all():
            raise ParameterError("Mask 取值必须为 0 或 1")
        object.__setattr__(self, 'data', _freeze(data.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return self.area == 0

    def bounding_box(self) -> Optional[Tuple[int, int, int, int]]:
        """返回 (x0, y0, x1, y1)，右下角不包含；空掩码返回 None"""
        ys, xs = np.nonzero(self.data)
        if len(xs) == 0:
            return None
        return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1

    def to_soft(self) -> 'SoftMask':
        return SoftMask(self.data.astype(np.float32))

    @classmethod
    def empty(cls, height: int, width: int) -> 'Mask':
        return cls(np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class SoftMask:
    """前景概率图，背景概率恒为 1 - 前景"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ShapeError(f"SoftMask.data 应为二维，实际为 {data.shape}")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ParameterError("SoftMask 取值必须位于 [0,1]")
        object.__setattr__(self, 'data', _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def background(self) -> np.ndarray:
        return 1.0 - self.data

    @classmethod
    def from_probs(cls, probs: np.ndarray, atol: float = 1e-5) -> 'SoftMask':
        """由 2 通道 softmax 输出 (背景, 前景) 构造，并检查归一化"""
        probs = np.asarray(probs, dtype=np.float32)
        if probs.ndim != 3 or probs.shape[0] != 2:
            raise ShapeError(f"softmax 输出形状应为 (2, H, W)，实际为 {probs.shape}")
        if not np.allclose(probs.sum(axis=0), 1.0, atol=atol):
            raise ParameterError("softmax 输出在某些像素上不满足 背景+前景=1")
        return cls(np.clip(probs[1], 0.0, 1.0))


@dataclass(frozen=True)
class PersonInstance:
    """(场景, 视角, 时刻, 身份) 句柄"""

    scene_id: str
    view_id: str
    frame_index: int
    identity: int
    gt_mask: Optional[Mask] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.identity < 1:
            raise ParameterError(f"身份编号必须 >= 1（0 保留给背景），实际为 {self.identity}")
        if self.frame_index < 0:
            raise ParameterError(f"帧序号不能为负: {self.frame_index}")

    @property
    def key(self) -> Tuple[str, str, int, int]:
        return self.scene_id, self.view_id, self.frame_index, self.identity


@dataclass(frozen=True)
class Sequence:
    """单个视角的帧序列"""

    view_id: str
    camera_kind: CameraKind
    frames: Tuple[Frame, ...]
    flows: Tuple[FlowField, ...]
    instances: Tuple[Tuple[PersonInstance, ...], ...]
    wearer_identity: Optional[int] = None
    scene_id: str = ''

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def is_first_person(self) -> bool:
        return self.camera_kind == CameraKind.FIRST_PERSON

    def instance(self, frame_index: int, identity: int) -> Optional[PersonInstance]:
        """查找某帧中指定身份的实例"""
        if not 0 <= frame_index < len(self.instances):
            return None
        for inst in self.instances[frame_index]:
            if inst.identity == identity:
                return inst
        return None

    def gt_mask(self, frame_index: int, identity: int) -> Mask:
        """某帧中指定身份的真值掩码；不可见时返回空掩码"""
        inst = self.instance(frame_index, identity)
        if inst is None or inst.gt_mask is None:
            return Mask.empty(self.height, self.width)
        return inst.gt_mask

    def identities_at(self, frame_index: int) -> List[int]:
        return sorted(inst.identity for inst in self.instances[frame_index])

    def window(self, start: int, stop: int) -> 'Sequence':
        """截取 [start, stop) 帧，帧序号重新从 0 开始"""
        if not 0 <= start < stop <= self.num_frames:
            raise ParameterError(f"窗口 [{start}, {stop}) 超出序列长度 {self.num_frames}")
        instances = tuple(
            tuple(PersonInstance(inst.scene_id, inst.view_id, t - start, inst.identity, inst.gt_mask)
                  for inst in self.instances[t])
            for t in range(start, stop)
        )
        return Sequence(
            view_id=self.view_id,
            camera_kind=self.camera_kind,
            frames=self.frames[start:stop],
            flows=self.flows[start:stop - 1],
            instances=instances,
            wearer_identity=self.wearer_identity,
            scene_id=self.scene_id,
        )


@dataclass(frozen=True)
class FirstPersonWindow:
    """第一人称视频窗口句柄：以 frame_index 结尾的最近若干帧"""

    scene_id: str
    view_id: str
    frame_index: int
    wearer_identity: int


@dataclass(frozen=True)
class ExamplePair:
    """训练样本对"""

    problem: Problem
    side_a: PersonInstance
    side_b: Union[PersonInstance, FirstPersonWindow]
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ParameterError(f"样本对标签必须为 0 或 1，实际为 {self.label}")

    def to_dict(self) -> Dict:
        side_b = {
            'scene_id': self.side_b.scene_id,
            'view_id': self.side_b.view_id,
            'frame_index': self.side_b.frame_index,
        }
        if isinstance(self.side_b, FirstPersonWindow):
            side_b['wearer_identity'] = self.side_b.wearer_identity
        else:
            side_b['identity'] = self.side_b.identity
        return {
            'problem': self.problem.value,
            'side_a': {
                'scene_id': self.side_a.scene_id,
                'view_id': self.side_a.view_id,
                'frame_index': self.side_a.frame_index,
                'identity': self.side_a.identity,
            },
            'side_b': side_b,
            'label': self.label,
        }
