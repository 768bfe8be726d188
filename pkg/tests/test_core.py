import numpy as np
import pytest

from core.errors import ParameterError, ShapeError
from core.types import CameraKind, FlowField, Frame, Mask, PersonInstance, Problem, Sequence, SoftMask
from core.validation import (
    FLOW_COUNT, INSTANCE_FRAME, MISSING_WEARER, RASTER_SIZE, WEARER_VISIBLE, threshold_mask, validate_sequence,
)


def _tiny_sequence(num_frames=3, num_flows=None, kind=CameraKind.THIRD_PERSON, wearer=None, identities=(1,)):
    frames = tuple(Frame(np.zeros((4, 4, 3), dtype=np.float32)) for _ in range(num_frames))
    num_flows = num_frames - 1 if num_flows is None else num_flows
    flows = tuple(FlowField.zeros(4, 4) for _ in range(num_flows))
    mask = Mask(np.eye(4, dtype=np.uint8))
    instances = tuple(tuple(PersonInstance('s', 'v', t, identity, mask) for identity in identities)
                      for t in range(num_frames))
    return Sequence('v', kind, frames, flows, instances, wearer_identity=wearer, scene_id='s')


def test_threshold_mask_is_inclusive():
    soft = SoftMask(np.array([[0.2, 0.5, 0.7]], dtype=np.float32))
    assert threshold_mask(soft).data.tolist() == [[0, 1, 1]]


def test_threshold_mask_custom_tau():
    soft = SoftMask(np.array([[0.2, 0.5, 0.7]], dtype=np.float32))
    assert threshold_mask(soft, 0.6).data.tolist() == [[0, 0, 1]]


def test_threshold_mask_is_idempotent_on_binary_input():
    mask = Mask(np.array([[0, 1], [1, 0]], dtype=np.uint8))
    assert np.array_equal(threshold_mask(mask.to_soft()).data, mask.data)


@pytest.mark.parametrize('tau', [0.0, 1.0, -0.1])
def test_threshold_mask_rejects_tau_outside_open_interval(tau):
    with pytest.raises(ParameterError):
        threshold_mask(SoftMask(np.zeros((2, 2))), tau)


def test_mask_rejects_non_binary_values():
    with pytest.raises(ParameterError):
        Mask(np.array([[0, 2]]))


def test_frame_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        Frame(np.zeros((4, 4)))


def test_soft_mask_from_probs_checks_normalization():
    probs = np.stack([np.full((2, 2), 0.3), np.full((2, 2), 0.6)])
    with pytest.raises(ParameterError):
        SoftMask.from_probs(probs)
    ok = SoftMask.from_probs(np.stack([np.full((2, 2), 0.25), np.full((2, 2), 0.75)]))
    assert np.allclose(ok.data, 0.75)
    assert np.allclose(ok.background, 0.25)


def test_bounding_box_excludes_bottom_right():
    data = np.zeros((5, 6), dtype=np.uint8)
    data[1:3, 2:5] = 1
    assert Mask(data).bounding_box() == (2, 1, 5, 3)
    assert Mask.empty(5, 6).bounding_box() is None


def test_person_instance_rejects_background_identity():
    with pytest.raises(ParameterError):
        PersonInstance('s', 'v', 0, 0)


def test_problem_parse_accepts_both_spellings():
    assert Problem.parse('third-first') == Problem.THIRD_FIRST
    assert Problem.parse('third_third') == Problem.THIRD_THIRD
    with pytest.raises(ParameterError):
        Problem.parse('first-first')


def test_valid_sequence_has_no_violations():
    assert validate_sequence(_tiny_sequence()) == []


def test_flow_count_violation():
    kinds = [v.kind for v in validate_sequence(_tiny_sequence(num_flows=1))]
    assert kinds == [FLOW_COUNT]


def test_wearer_visible_violation():
    seq = _tiny_sequence(kind=CameraKind.FIRST_PERSON, wearer=1)
    kinds = {v.kind for v in validate_sequence(seq)}
    assert kinds == {WEARER_VISIBLE}


def test_missing_wearer_violation():
    seq = _tiny_sequence(kind=CameraKind.FIRST_PERSON, wearer=None, identities=(2,))
    assert [v.kind for v in validate_sequence(seq)] == [MISSING_WEARER]


def test_raster_size_violation():
    seq = _tiny_sequence()
    frames = seq.frames[:2] + (Frame(np.zeros((5, 4, 3), dtype=np.float32)),)
    bad = Sequence(seq.view_id, seq.camera_kind, frames, seq.flows, seq.instances)
    assert RASTER_SIZE in {v.kind for v in validate_sequence(bad)}


def test_instance_frame_violation():
    seq = _tiny_sequence()
    shifted = (seq.instances[1],) + seq.instances[1:]
    bad = Sequence(seq.view_id, seq.camera_kind, seq.frames, seq.flows, shifted)
    assert INSTANCE_FRAME in {v.kind for v in validate_sequence(bad)}


def test_window_renumbers_frames():
    seq = _tiny_sequence(num_frames=5)
    window = seq.window(2, 5)
    assert window.num_frames == 3
    assert len(window.flows) == 2
    assert [inst.frame_index for frame in window.instances for inst in frame] == [0, 1, 2]
    assert validate_sequence(window) == []
    with pytest.raises(ParameterError):
        seq.window(3, 3)
