import pytest

from core.errors import EmptyDatasetError, ParameterError
from core.types import FirstPersonWindow, PersonInstance, Problem
from dataset_store import export_dataset, load_manifest
from synthdata.pair_sampler import sample_pairs
from tests.conftest import paired_scene, static_scene


@pytest.fixture(scope='module')
def manifest(tmp_path_factory):
    root = str(tmp_path_factory.mktemp('pairs'))
    export_dataset([paired_scene()], root)
    return load_manifest(root)


def test_third_third_pairs_are_same_frame_different_views(manifest):
    pairs = sample_pairs(manifest, 'third-third', neg_ratio=1.0, seed=0)
    assert pairs
    for pair in pairs:
        assert pair.problem == Problem.THIRD_THIRD
        assert isinstance(pair.side_b, PersonInstance)
        assert pair.side_a.view_id != pair.side_b.view_id
        assert pair.side_a.frame_index == pair.side_b.frame_index
        assert pair.label == int(pair.side_a.identity == pair.side_b.identity)


def test_negative_ratio_is_respected(manifest):
    pairs = sample_pairs(manifest, 'third-third', neg_ratio=2.0, seed=0)
    positives = sum(pair.label for pair in pairs)
    assert len(pairs) - positives == round(2.0 * positives)


def test_sampling_is_deterministic(manifest):
    a = sample_pairs(manifest, 'third-third', neg_ratio=1.5, seed=4)
    b = sample_pairs(manifest, 'third-third', neg_ratio=1.5, seed=4)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]


def test_third_first_positive_means_wearer(manifest):
    pairs = sample_pairs(manifest, 'third-first', neg_ratio=1.0, seed=0)
    assert pairs
    wearers = manifest.wearer_map['paired']
    for pair in pairs:
        assert isinstance(pair.side_b, FirstPersonWindow)
        assert pair.side_b.wearer_identity == wearers[pair.side_b.view_id]
        assert pair.side_a.view_id != pair.side_b.view_id
        assert pair.label == int(pair.side_a.identity == pair.side_b.wearer_identity)


def test_side_a_was_visible_in_previous_frame(manifest):
    views = {view['view_id']: view for view in manifest.scene_entry('paired')['views']}
    for pair in sample_pairs(manifest, 'third-third', neg_ratio=1.0, seed=0):
        t = pair.side_a.frame_index
        if t > 0:
            assert pair.side_a.identity in views[pair.side_a.view_id]['frames'][t - 1]['visible']


def test_single_view_scene_has_no_pairs(tmp_path):
    export_dataset([static_scene(num_frames=3)], str(tmp_path))
    with pytest.raises(EmptyDatasetError):
        sample_pairs(load_manifest(str(tmp_path)), 'third-third', neg_ratio=1.0, seed=0)


def test_non_positive_ratio_is_rejected(manifest):
    with pytest.raises(ParameterError):
        sample_pairs(manifest, 'third-third', neg_ratio=0.0, seed=0)
