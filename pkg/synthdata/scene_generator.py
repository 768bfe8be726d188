"""
合成场景生成
二维纯平移世界：人物为带纹理的凸形精灵，相机为在世界中平移的视口
第一人称相机跟随佩戴者移动（可附加 <=1 像素抖动），且不绘制佩戴者本人
整个生成过程是 (配置, 种子) 的纯函数
"""

import copy
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.errors import GenerationError, ParameterError, ViewLookupError
from core.types import CameraKind

# 高对比度调色板（精灵主色/条纹色从中选取）
PALETTE: List[Tuple[int, int, int]] = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (250, 250, 250), (10, 10, 10), (128, 0, 0), (0, 0, 128),
]
STRIPE_ORIENTATIONS = [(1, 0), (0, 1), (1, 1), (1, -1)]
SHAPES = ('rect', 'ellipse')


@dataclass
class TextureSpec:
    """精灵纹理：主色与条纹色交替，纹理固定在精灵自身坐标系中"""

    base_color: Tuple[int, int, int]
    stripe_color: Tuple[int, int, int]
    stripe_period: int
    orientation: Tuple[int, int]

    def key(self) -> Tuple:
        return tuple(self.base_color), tuple(self.stripe_color), self.stripe_period, tuple(self.orientation)


@dataclass
class AgentSpec:
    """人物精灵；positions 为每帧左上角的世界坐标"""

    identity: int
    width: int
    height: int
    shape: str = 'rect'
    texture: Optional[TextureSpec] = None
    start: Optional[Tuple[int, int]] = None
    # 分段线性轨迹：[(dx, dy, 帧数), ...]
    segments: Optional[List[Tuple[int, int, int]]] = None
    positions: Optional[List[Tuple[int, int]]] = None


@dataclass
class RigSpec:
    """相机视口；positions 为每帧视口左上角的世界坐标"""

    view_id: str
    kind: CameraKind
    width: int
    height: int
    carried_identity: Optional[int] = None
    start: Optional[Tuple[int, int]] = None
    segments: Optional[List[Tuple[int, int, int]]] = None
    # 第一人称视口相对佩戴者中心的偏移
    offset: Tuple[int, int] = (0, 0)
    jitter: bool = False
    positions: Optional[List[Tuple[int, int]]] = None


@dataclass
class SceneSpec:
    """场景配置；generate_scene 返回全部字段已解析的副本"""

    scene_id: str
    seed: int
    world_width: int = 128
    world_height: int = 128
    num_agents: int = 3
    num_frames: int = 20
    agents: List[AgentSpec] = field(default_factory=list)
    rigs: List[RigSpec] = field(default_factory=list)
    # 未显式给出相机时自动生成的数量
    num_first_person: int = 2
    num_third_person: int = 1
    viewport: int = 64
    agent_size_min: int = 14
    agent_size_max: int = 22
    max_speed: int = 2
    segment_length_min: int = 3
    segment_length_max: int = 8
    ego_jitter: bool = True
    background_seed: Optional[int] = None

    @property
    def wearer_map(self) -> Dict[str, int]:
        """第一人称视角ID -> 佩戴者身份"""
        return {rig.view_id: rig.carried_identity for rig in self.rigs if rig.kind == CameraKind.FIRST_PERSON}

    @property
    def view_ids(self) -> List[str]:
        return [rig.view_id for rig in self.rigs]

    def rig(self, view_id: str) -> RigSpec:
        for rig in self.rigs:
            if rig.view_id == view_id:
                return rig
        raise ViewLookupError(f"场景 {self.scene_id} 中没有视角 {view_id}")

    def to_dict(self) -> Dict:
        data = asdict(self)
        for rig in data['rigs']:
            rig['kind'] = CameraKind(rig['kind']).value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'SceneSpec':
        data = copy.deepcopy(data)
        agents = []
        for agent in data.pop('agents', []):
            texture = agent.pop('texture', None)
            agents.append(AgentSpec(
                texture=TextureSpec(**_tuples(texture)) if texture else None,
                **_tuples(agent),
            ))
        rigs = []
        for rig in data.pop('rigs', []):
            rig = _tuples(rig)
            rig['kind'] = CameraKind(rig['kind'])
            rigs.append(RigSpec(**rig))
        return cls(agents=agents, rigs=rigs, **data)

    @classmethod
    def from_config(cls, scene_id: str, seed: int, scene_config: Dict) -> 'SceneSpec':
        """由配置节 'scene' 构造（未解析）"""
        return cls(
            scene_id=scene_id,
            seed=seed,
            world_width=scene_config['world_size'],
            world_height=scene_config['world_size'],
            num_agents=scene_config['num_agents'],
            num_frames=scene_config['num_frames'],
            num_first_person=scene_config['num_first_person'],
            num_third_person=scene_config['num_third_person'],
            viewport=scene_config['viewport'],
            agent_size_min=scene_config['agent_size_min'],
            agent_size_max=scene_config['agent_size_max'],
            max_speed=scene_config['max_speed'],
            segment_length_min=scene_config['segment_length_min'],
            segment_length_max=scene_config['segment_length_max'],
            ego_jitter=scene_config['ego_jitter'],
        )


def _tuples(values: Dict) -> Dict:
    """JSON 中的列表还原为元组（位置、颜色、分段）"""
    restored = {}
    for key, value in values.items():
        if key in ('positions', 'segments') and value is not None:
            restored[key] = [tuple(v) for v in value]
        elif isinstance(value, list):
            restored[key] = tuple(value)
        else:
            restored[key] = value
    return restored


def expand_segments(start: Tuple[int, int], segments: List[Tuple[int, int, int]],
                    num_frames: int) -> List[Tuple[int, int]]:
    """把分段线性轨迹展开为逐帧位置；分段用完后保持静止"""
    x, y = int(start[0]), int(start[1])
    positions = [(x, y)]
    steps = [(int(dx), int(dy)) for dx, dy, length in segments for _ in range(int(length))]
    for t in range(1, num_frames):
        dx, dy = steps[t - 1] if t - 1 < len(steps) else (0, 0)
        x, y = x + dx, y + dy
        positions.append((x, y))
    return positions


def _random_trajectory(rng: np.random.Generator, spec: SceneSpec, width: int, height: int,
                       box: Tuple[int, int, int, int]) -> Tuple[Tuple[int, int], List[Tuple[int, int, int]]]:
    """在中心点约束框 box=(x0, y0, x1, y1) 内生成随机分段线性轨迹，碰边反弹"""
    x0, y0, x1, y1 = box
    cx = int(rng.integers(x0, x1 + 1))
    cy = int(rng.integers(y0, y1 + 1))
    start = (cx - width // 2, cy - height // 2)

    segments = []
    remaining = spec.num_frames - 1
    while remaining > 0:
        vx = int(rng.integers(-spec.max_speed, spec.max_speed + 1))
        vy = int(rng.integers(-spec.max_speed, spec.max_speed + 1))
        length = int(rng.integers(spec.segment_length_min, spec.segment_length_max + 1))
        length = min(length, remaining)
        for _ in range(length):
            if not x0 <= cx + vx <= x1:
                vx = -vx
            if not y0 <= cy + vy <= y1:
                vy = -vy
            cx, cy = cx + vx, cy + vy
            if segments and segments[-1][:2] == (vx, vy):
                segments[-1] = (vx, vy, segments[-1][2] + 1)
            else:
                segments.append((vx, vy, 1))
        remaining -= length
    return start, segments


def _make_textures(rng: np.random.Generator, count: int) -> List[TextureSpec]:
    """为每个身份生成两两不同的纹理"""
    if count > len(PALETTE):
        raise GenerationError(f"人物数量 {count} 超过调色板容量 {len(PALETTE)}")
    order = rng.permutation(len(PALETTE))
    textures = []
    for i in range(count):
        base = PALETTE[int(order[i])]
        stripe = PALETTE[int(order[(i + count) % len(PALETTE)])]
        if stripe == base:
            stripe = PALETTE[int(order[(i + 1) % len(PALETTE)])]
        textures.append(TextureSpec(
            base_color=base,
            stripe_color=stripe,
            stripe_period=int(rng.integers(2, 5)),
            orientation=STRIPE_ORIENTATIONS[int(rng.integers(len(STRIPE_ORIENTATIONS)))],
        ))
    return textures


def _resolve_agents(rng: np.random.Generator, spec: SceneSpec) -> List[AgentSpec]:
    """补全人物：尺寸、形状、纹理、轨迹"""
    agents = copy.deepcopy(spec.agents)
    if not agents:
        for i in range(spec.num_agents):
            size_w = int(rng.integers(spec.agent_size_min, spec.agent_size_max + 1))
            size_h = int(rng.integers(spec.agent_size_min, spec.agent_size_max + 1))
            agents.append(AgentSpec(identity=i + 1, width=size_w, height=size_h, shape=SHAPES[i % len(SHAPES)]))

    textures = _make_textures(rng, len(agents))
    # 第一人称视口需完整落在世界内：中心点距边界至少半个视口（再留 1 像素给抖动）
    margin_x = spec.viewport // 2 + 1
    margin_y = spec.viewport // 2 + 1
    box = (margin_x, margin_y, spec.world_width - margin_x - 1, spec.world_height - margin_y - 1)
    if box[0] > box[2] or box[1] > box[3]:
        raise GenerationError(f"世界尺寸 {spec.world_width}x{spec.world_height} 容不下 {spec.viewport} 像素视口")

    for agent, texture in zip(agents, textures):
        if agent.identity < 1:
            raise ParameterError(f"人物身份必须 >= 1: {agent.identity}")
        if agent.texture is None:
            agent.texture = texture
        if agent.positions is None:
            if agent.segments is None:
                agent.start, agent.segments = _random_trajectory(rng, spec, agent.width, agent.height, box)
            elif agent.start is None:
                raise ParameterError(f"人物 {agent.identity} 给出了分段轨迹但缺少起点")
            agent.positions = expand_segments(agent.start, agent.segments, spec.num_frames)
        if len(agent.positions) != spec.num_frames:
            raise ParameterError(f"人物 {agent.identity} 的轨迹长度 {len(agent.positions)} 与帧数 {spec.num_frames} 不符")

    keys = [agent.texture.key() for agent in agents]
    if len(set(keys)) != len(keys):
        raise GenerationError("人物纹理必须两两不同")
    return agents


def _resolve_rigs(rng: np.random.Generator, spec: SceneSpec, agents: List[AgentSpec]) -> List[RigSpec]:
    """补全相机：第一人称跟随佩戴者，第三人称默认静止于世界中央"""
    rigs = copy.deepcopy(spec.rigs)
    if not rigs:
        if spec.num_first_person > len(agents):
            raise ParameterError(f"第一人称相机数 {spec.num_first_person} 超过人物数 {len(agents)}")
        for i in range(spec.num_first_person):
            rigs.append(RigSpec(view_id=f'fp{i + 1}', kind=CameraKind.FIRST_PERSON, width=spec.viewport,
                                height=spec.viewport, carried_identity=agents[i].identity, jitter=spec.ego_jitter))
        center = ((spec.world_width - spec.viewport) // 2, (spec.world_height - spec.viewport) // 2)
        for i in range(spec.num_third_person):
            rigs.append(RigSpec(view_id=f'tp{i + 1}', kind=CameraKind.THIRD_PERSON, width=spec.viewport,
                                height=spec.viewport, start=center, segments=[]))

    by_identity = {agent.identity: agent for agent in agents}
    view_ids = set()
    for rig in rigs:
        rig.kind = CameraKind(rig.kind)
        if rig.view_id in view_ids:
            raise ParameterError(f"视角ID重复: {rig.view_id}")
        view_ids.add(rig.view_id)
        if rig.positions is not None:
            continue
        if rig.kind == CameraKind.FIRST_PERSON:
            carrier = by_identity.get(rig.carried_identity)
            if carrier is None:
                raise GenerationError(f"第一人称视角 {rig.view_id} 引用了不存在的人物 {rig.carried_identity}")
            positions = []
            for x, y in carrier.positions:
                jx, jy = (int(v) for v in rng.integers(-1, 2, size=2)) if rig.jitter else (0, 0)
                positions.append((x + carrier.width // 2 - rig.width // 2 + rig.offset[0] + jx,
                                  y + carrier.height // 2 - rig.height // 2 + rig.offset[1] + jy))
            rig.positions = positions
        else:
            start = rig.start if rig.start is not None else (0, 0)
            rig.positions = expand_segments(start, rig.segments or [], spec.num_frames)
    return rigs


def _check_viewports(spec: SceneSpec):
    """视口在任何时刻都必须完整位于世界之内"""
    for rig in spec.rigs:
        if len(rig.positions) != spec.num_frames:
            raise ParameterError(f"视角 {rig.view_id} 的轨迹长度 {len(rig.positions)} 与帧数 {spec.num_frames} 不符")
        for t, (x, y) in enumerate(rig.positions):
            if x < 0 or y < 0 or x + rig.width > spec.world_width or y + rig.height > spec.world_height:
                raise GenerationError(f"视角 {rig.view_id} 在第 {t} 帧超出世界边界（视口左上角 ({x}, {y})）")


def _has_shared_identity(spec: SceneSpec) -> bool:
    """是否存在某个身份在同一时刻被至少两个视角看到"""
    from synthdata.renderer import render_labels

    for t in range(spec.num_frames):
        seen: Dict[int, int] = {}
        for rig in spec.rigs:
            for identity in np.unique(render_labels(spec, rig.view_id, t)):
                if identity > 0:
                    seen[int(identity)] = seen.get(int(identity), 0) + 1
        if any(count >= 2 for count in seen.values()):
            return True
    return False


def generate_scene(config: SceneSpec, max_attempts: int = 20) -> SceneSpec:
    """解析场景配置，返回确定性的完整场景"""
    if config.num_agents < 1:
        raise ParameterError(f"num_agents 必须 >= 1，实际为 {config.num_agents}")
    if config.num_frames < 2:
        raise ParameterError(f"num_frames 必须 >= 2，实际为 {config.num_frames}")

    rng = np.random.default_rng(config.seed)
    randomized = not config.agents or any(agent.positions is None and agent.segments is None
                                          for agent in config.agents)

    for attempt in range(max_attempts):
        resolved = copy.deepcopy(config)
        resolved.agents = _resolve_agents(rng, config)
        resolved.num_agents = len(resolved.agents)
        resolved.rigs = _resolve_rigs(rng, config, resolved.agents)
        resolved.background_seed = int(rng.integers(0, 2 ** 31 - 1)) if config.background_seed is None \
            else config.background_seed
        _check_viewports(resolved)

        # 只有一个视角时无法满足“多视角共同可见”
        if len(resolved.rigs) < 2 or _has_shared_identity(resolved):
            return resolved
        if not randomized:
            break

    raise GenerationError(f"场景 {config.scene_id} 中没有任何身份被至少两个视角同时看到")
