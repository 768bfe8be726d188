import numpy as np
import pytest

from core.errors import GenerationError, ParameterError
from core.types import CameraKind
from core.validation import validate_sequence
from synthdata.benchmark import build_benchmark
from synthdata.renderer import render_labels, render_sequence, render_view
from synthdata.scene_generator import AgentSpec, RigSpec, SceneSpec, expand_segments, generate_scene
from tests.conftest import desk_scene, moving_scene, static_scene


def test_expand_segments_holds_position_after_last_segment():
    assert expand_segments((0, 0), [(1, 2, 2)], 4) == [(0, 0), (1, 2), (2, 4), (2, 4)]


def test_generation_is_deterministic():
    a = desk_scene(seed=7)
    b = desk_scene(seed=7)
    assert a.to_dict() == b.to_dict()
    for view_id in a.view_ids:
        frame_a, masks_a, flow_a = render_view(a, view_id, 2)
        frame_b, masks_b, flow_b = render_view(b, view_id, 2)
        assert np.array_equal(frame_a.data, frame_b.data)
        assert np.array_equal(flow_a.data, flow_b.data)
        assert sorted(masks_a) == sorted(masks_b)


def test_different_seeds_give_different_scenes():
    assert desk_scene(seed=1).to_dict() != desk_scene(seed=2).to_dict()


def test_default_rigs_and_distinct_textures():
    scene = desk_scene()
    kinds = [rig.kind for rig in scene.rigs]
    assert kinds.count(CameraKind.FIRST_PERSON) == 2
    assert kinds.count(CameraKind.THIRD_PERSON) == 1
    keys = [agent.texture.key() for agent in scene.agents]
    assert len(set(keys)) == len(keys)


def test_wearer_never_visible_in_own_view():
    scene = desk_scene(num_frames=10)
    for view_id, wearer in scene.wearer_map.items():
        seq = render_sequence(scene, view_id)
        assert seq.wearer_identity == wearer
        assert all(wearer not in seq.identities_at(t) for t in range(seq.num_frames))
        assert validate_sequence(seq) == []


def test_some_identity_seen_by_two_views():
    scene = desk_scene(num_frames=10)
    shared = False
    for t in range(scene.num_frames):
        counts = {}
        for view_id in scene.view_ids:
            for identity in np.unique(render_labels(scene, view_id, t)):
                if identity > 0:
                    counts[identity] = counts.get(identity, 0) + 1
        shared = shared or any(c >= 2 for c in counts.values())
    assert shared


def test_flow_of_moving_person_under_static_camera():
    scene = moving_scene()
    seq = render_sequence(scene, 'tp1')
    flow = seq.flows[0].data
    person = seq.gt_mask(0, 1).data.astype(bool)
    assert np.all(flow[person] == (3.0, 0.0))
    background = ~np.isin(render_labels(scene, 'tp1', 0), (1, 2))
    assert np.all(flow[background] == 0.0)


def test_texture_moves_with_flow():
    scene = moving_scene()
    seq = render_sequence(scene, 'tp1')
    ys, xs = np.nonzero(seq.gt_mask(1, 1).data)
    frame_now = seq.frames[1].data
    frame_next = seq.frames[2].data
    assert np.array_equal(frame_now[ys, xs], frame_next[ys, xs + 3])


def test_background_flow_under_moving_camera_is_negative_camera_motion():
    scene = desk_scene(num_frames=8)
    view_id = next(iter(scene.wearer_map))
    rig = scene.rig(view_id)
    for t in range(scene.num_frames - 1):
        _, _, flow = render_view(scene, view_id, t)
        labels = render_labels(scene, view_id, t)
        cam_dx = rig.positions[t + 1][0] - rig.positions[t][0]
        cam_dy = rig.positions[t + 1][1] - rig.positions[t][1]
        background = flow.data[labels == 0]
        assert np.all(background[:, 0] == -cam_dx)
        assert np.all(background[:, 1] == -cam_dy)


def test_static_scene_masks_do_not_change():
    seq = render_sequence(static_scene(), 'tp1')
    for t in range(1, seq.num_frames):
        assert np.array_equal(seq.gt_mask(t, 1).data, seq.gt_mask(0, 1).data)
        assert np.all(seq.flows[t - 1].data == 0.0)


def test_viewport_outside_world_is_rejected():
    spec = SceneSpec(
        scene_id='bad', seed=0, num_frames=3, viewport=16,
        agents=[AgentSpec(identity=1, width=10, height=10, start=(40, 40), segments=[])],
        rigs=[RigSpec(view_id='tp1', kind=CameraKind.THIRD_PERSON, width=64, height=64, start=(100, 100),
                      segments=[])],
    )
    with pytest.raises(GenerationError):
        generate_scene(spec)


def test_single_frame_scene_is_rejected():
    with pytest.raises(ParameterError):
        generate_scene(SceneSpec(scene_id='x', seed=0, num_frames=1))


def test_resolved_spec_survives_dict_roundtrip():
    scene = desk_scene(num_frames=4)
    restored = SceneSpec.from_dict(scene.to_dict())
    frame_a, _, _ = render_view(scene, 'tp1', 3)
    frame_b, _, _ = render_view(restored, 'tp1', 3)
    assert np.array_equal(frame_a.data, frame_b.data)


def test_benchmark_split_and_seeds():
    scene_config = {
        'world_size': 128, 'viewport': 64, 'num_agents': 3, 'num_first_person': 2, 'num_third_person': 1,
        'num_frames': 4, 'agent_size_min': 14, 'agent_size_max': 22, 'max_speed': 2,
        'segment_length_min': 3, 'segment_length_max': 8, 'ego_jitter': True,
    }
    scenes, splits = build_benchmark(0, scene_config, num_scenes=3, num_train=2)
    assert [scene.scene_id for scene in scenes] == ['scene_000', 'scene_001', 'scene_002']
    assert [splits[scene.scene_id] for scene in scenes] == ['train', 'train', 'test']
    again, _ = build_benchmark(0, scene_config, num_scenes=3, num_train=2)
    assert [s.to_dict() for s in scenes] == [s.to_dict() for s in again]
    with pytest.raises(ParameterError):
        build_benchmark(0, scene_config, num_scenes=2, num_train=3)
