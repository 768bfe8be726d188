import pytest
import torch

from core.types import CameraKind
from networks.matchnet import MatchConfig
from networks.segnet import SegNetConfig, SegOutput
from processors.pipeline import BaseEmbedder
from synthdata.renderer import render_sequence
from synthdata.scene_generator import AgentSpec, RigSpec, SceneSpec, generate_scene


def tiny_seg_config(**overrides) -> SegNetConfig:
    values = dict(width=64, height=64, flow_stack=2, stage_widths=(4, 4, 8, 8, 8), head_channels=8)
    values.update(overrides)
    return SegNetConfig(**values)


def tiny_match_config(problem='third_third', **overrides) -> MatchConfig:
    values = dict(problem=problem, reweight_mode='soft_attention', embed_channels=8, head_depth=1)
    values.update(overrides)
    return MatchConfig(**values)


def static_scene(num_frames: int = 6) -> SceneSpec:
    """一个静止的第三人称视角，两个静止的人"""
    spec = SceneSpec(
        scene_id='static',
        seed=11,
        num_frames=num_frames,
        viewport=16,
        agents=[
            AgentSpec(identity=1, width=16, height=20, start=(40, 40), segments=[]),
            AgentSpec(identity=2, width=14, height=14, start=(70, 60), segments=[]),
        ],
        rigs=[RigSpec(view_id='tp1', kind=CameraKind.THIRD_PERSON, width=64, height=64, start=(32, 32), segments=[])],
    )
    return generate_scene(spec)


def moving_scene(num_frames: int = 6) -> SceneSpec:
    """人物 1 每帧向右移动 3 像素，第 5 帧时与第 0 帧的位置不再重叠"""
    spec = SceneSpec(
        scene_id='moving',
        seed=12,
        num_frames=num_frames,
        viewport=16,
        agents=[
            AgentSpec(identity=1, width=12, height=12, start=(36, 50), segments=[(3, 0, num_frames - 1)]),
            AgentSpec(identity=2, width=12, height=12, start=(70, 70), segments=[(0, -1, num_frames - 1)]),
        ],
        rigs=[RigSpec(view_id='tp1', kind=CameraKind.THIRD_PERSON, width=64, height=64, start=(32, 32), segments=[])],
    )
    return generate_scene(spec)


def paired_scene(num_frames: int = 6) -> SceneSpec:
    """两个人、两个第一人称（各由一人佩戴）加一个第三人称；每个视角每帧都能看到所有非佩戴者"""
    spec = SceneSpec(
        scene_id='paired',
        seed=13,
        num_frames=num_frames,
        agents=[
            AgentSpec(identity=1, width=14, height=14, start=(40, 40), segments=[]),
            AgentSpec(identity=2, width=14, height=14, start=(60, 60), segments=[(1, 0, num_frames - 1)]),
        ],
        rigs=[
            RigSpec(view_id='fp1', kind=CameraKind.FIRST_PERSON, width=64, height=64, carried_identity=1),
            RigSpec(view_id='fp2', kind=CameraKind.FIRST_PERSON, width=64, height=64, carried_identity=2),
            RigSpec(view_id='tp1', kind=CameraKind.THIRD_PERSON, width=64, height=64, start=(32, 32), segments=[]),
        ],
    )
    return generate_scene(spec)


def desk_scene(seed: int = 3, num_frames: int = 6, scene_id: str = 'scene_000') -> SceneSpec:
    """默认结构的场景：3 人，2 个第一人称 + 1 个第三人称"""
    return generate_scene(SceneSpec(scene_id=scene_id, seed=seed, num_frames=num_frames))


def as_dataset(*scenes: SceneSpec):
    return {scene.scene_id: {view_id: render_sequence(scene, view_id) for view_id in scene.view_ids}
            for scene in scenes}


class EchoNet(torch.nn.Module):
    """前景概率等于前掩码通道的桩网络"""

    def __init__(self, config: SegNetConfig):
        super().__init__()
        self.config = config

    def forward(self, visual_in, motion_in):
        pre_mask = visual_in[:, -1]
        return SegOutput(probs=torch.stack([1.0 - pre_mask, pre_mask], dim=1))


class OneHotEmbedder(BaseEmbedder):
    """每个身份一个独热嵌入，第一人称相机取佩戴者的嵌入"""

    def _one_hot(self, identity: int, num_frames: int) -> torch.Tensor:
        embedding = torch.zeros(num_frames, 4, 1, 1)
        embedding[:, identity] = 1.0
        return embedding

    def embed_person(self, seq, identity, propagation):
        self.forward_passes += 1
        return self._one_hot(identity, seq.num_frames)

    def embed_first_person(self, seq):
        self.forward_passes += 1
        return self._one_hot(seq.wearer_identity, seq.num_frames)


@pytest.fixture
def seg_config():
    return tiny_seg_config()


@pytest.fixture
def small_dataset():
    return as_dataset(paired_scene())
