"""
视角渲染
画家算法：编号靠后的人物遮挡靠前的人物，人物遮挡背景
光流 = 该像素最上层表面的位移 - 相机位移
"""

from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image

from core.errors import ParameterError
from core.types import CameraKind, FlowField, Frame, Mask, PersonInstance, Sequence
from synthdata.scene_generator import AgentSpec, RigSpec, SceneSpec

BACKGROUND_GRID = 16


@lru_cache(maxsize=32)
def background_texture(background_seed: int, world_width: int, world_height: int) -> np.ndarray:
    """平滑随机噪声背景（世界坐标系，uint8 RGB）"""
    rng = np.random.default_rng(background_seed)
    grid_w = max(2, world_width // BACKGROUND_GRID + 1)
    grid_h = max(2, world_height // BACKGROUND_GRID + 1)
    # 背景亮度压在中间区间，与高对比度精灵区分开
    coarse = rng.integers(70, 170, size=(grid_h, grid_w, 3), dtype=np.uint8)
    smooth = Image.fromarray(coarse).resize((world_width, world_height), resample=Image.Resampling.BILINEAR)
    texture = np.asarray(smooth, dtype=np.uint8).copy()
    texture.setflags(write=False)
    return texture


@lru_cache(maxsize=256)
def _sprite_cached(identity: int, width: int, height: int, shape: str, base_color: Tuple, stripe_color: Tuple,
                   stripe_period: int, orientation: Tuple) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    if shape == 'ellipse':
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        rx, ry = width / 2.0, height / 2.0
        support = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    elif shape == 'rect':
        support = np.ones((height, width), dtype=bool)
    else:
        raise ParameterError(f"人物 {identity} 的形状未知: {shape}")

    phase = np.floor_divide(xs * orientation[0] + ys * orientation[1], stripe_period) % 2
    colors = np.where(phase[..., None] == 0, np.array(base_color, dtype=np.uint8),
                      np.array(stripe_color, dtype=np.uint8)).astype(np.uint8)
    support.setflags(write=False)
    colors.setflags(write=False)
    return support, colors


def sprite_raster(agent: AgentSpec) -> Tuple[np.ndarray, np.ndarray]:
    """精灵的支撑区域 (h, w) bool 与纹理 (h, w, 3) uint8，纹理随精灵移动"""
    texture = agent.texture
    return _sprite_cached(agent.identity, agent.width, agent.height, agent.shape, tuple(texture.base_color),
                          tuple(texture.stripe_color), texture.stripe_period, tuple(texture.orientation))


def _check_time(scene: SceneSpec, t: int):
    if not 0 <= t < scene.num_frames:
        raise ParameterError(f"帧序号 {t} 超出范围 [0, {scene.num_frames})")


def _visible_agents(scene: SceneSpec, rig: RigSpec):
    """按画家顺序返回该视角需要绘制的人物（第一人称不绘制佩戴者）"""
    for agent in scene.agents:
        if rig.kind == CameraKind.FIRST_PERSON and agent.identity == rig.carried_identity:
            continue
        yield agent


def _paste_region(agent_pos: Tuple[int, int], agent: AgentSpec, cam_pos: Tuple[int, int], rig: RigSpec):
    """精灵在视口中的裁剪区域：返回 (视口切片, 精灵切片)，不相交时返回 None"""
    left = agent_pos[0] - cam_pos[0]
    top = agent_pos[1] - cam_pos[1]
    x0, y0 = max(left, 0), max(top, 0)
    x1, y1 = min(left + agent.width, rig.width), min(top + agent.height, rig.height)
    if x0 >= x1 or y0 >= y1:
        return None
    view_slice = (slice(y0, y1), slice(x0, x1))
    sprite_slice = (slice(y0 - top, y1 - top), slice(x0 - left, x1 - left))
    return view_slice, sprite_slice


def render_labels(scene: SceneSpec, view_id: str, t: int) -> np.ndarray:
    """只渲染身份标签图（0 为背景）"""
    _check_time(scene, t)
    rig = scene.rig(view_id)
    cam = rig.positions[t]
    labels = np.zeros((rig.height, rig.width), dtype=np.int32)
    for agent in _visible_agents(scene, rig):
        region = _paste_region(agent.positions[t], agent, cam, rig)
        if region is None:
            continue
        view_slice, sprite_slice = region
        support, _ = sprite_raster(agent)
        labels[view_slice][support[sprite_slice]] = agent.identity
    return labels


def render_view(scene: SceneSpec, view_id: str, t: int) -> Tuple[Frame, Dict[int, Mask], Optional[FlowField]]:
    """渲染第 t 帧：RGB 帧、各可见身份的掩码、到第 t+1 帧的光流（最后一帧为 None）"""
    _check_time(scene, t)
    rig = scene.rig(view_id)
    cam = rig.positions[t]
    has_next = t + 1 < scene.num_frames

    background = background_texture(scene.background_seed, scene.world_width, scene.world_height)
    canvas = background[cam[1]:cam[1] + rig.height, cam[0]:cam[0] + rig.width].copy()
    labels = np.zeros((rig.height, rig.width), dtype=np.int32)

    flow = None
    if has_next:
        cam_next = rig.positions[t + 1]
        cam_dx, cam_dy = cam_next[0] - cam[0], cam_next[1] - cam[1]
        flow = np.empty((rig.height, rig.width, 2), dtype=np.float32)
        flow[..., 0] = -cam_dx
        flow[..., 1] = -cam_dy

    for agent in _visible_agents(scene, rig):
        region = _paste_region(agent.positions[t], agent, cam, rig)
        if region is None:
            continue
        view_slice, sprite_slice = region
        support, colors = sprite_raster(agent)
        cover = support[sprite_slice]
        canvas[view_slice][cover] = colors[sprite_slice][cover]
        labels[view_slice][cover] = agent.identity
        if flow is not None:
            pos_next = agent.positions[t + 1]
            flow[view_slice][cover] = (
                pos_next[0] - agent.positions[t][0] - cam_dx,
                pos_next[1] - agent.positions[t][1] - cam_dy,
            )

    masks = {}
    for identity in np.unique(labels):
        if identity > 0:
            masks[int(identity)] = Mask((labels == identity).astype(np.uint8))

    return Frame.from_uint8(canvas), masks, FlowField(flow) if flow is not None else None


def render_sequence(scene: SceneSpec, view_id: str) -> Sequence:
    """渲染整个视角序列"""
    rig = scene.rig(view_id)
    frames, flows, instances = [], [], []
    for t in range(scene.num_frames):
        frame, masks, flow = render_view(scene, view_id, t)
        frames.append(frame)
        if flow is not None:
            flows.append(flow)
        instances.append(tuple(
            PersonInstance(scene.scene_id, view_id, t, identity, mask)
            for identity, mask in sorted(masks.items())
        ))
    return Sequence(
        view_id=view_id,
        camera_kind=rig.kind,
        frames=tuple(frames),
        flows=tuple(flows),
        instances=tuple(instances),
        wearer_identity=rig.carried_identity if rig.kind == CameraKind.FIRST_PERSON else None,
        scene_id=scene.scene_id,
    )
