import json
import os

import pytest
import torch

from config import Config
from core.errors import EmptyDatasetError, ParameterError
from core.types import ExamplePair, FirstPersonWindow, PersonInstance, Problem
from networks.matchnet import build_match_head
from networks.segnet import SegNetConfig, build_network
from processors.evaluator import evaluate_dataset
from training.samples import instance_samples, iter_batches, predicted_premask
from training.trainer import (
    TRAIN_LOG_NAME, TrainConfig, pair_losses, parameter_checksum, train_fcn_stage, train_joint_stage,
)
from tests.conftest import as_dataset, desk_scene, tiny_match_config, tiny_seg_config


def _fcn_config(**overrides):
    values = dict(stage='fcn', lr=1e-3, batch_size=8, fcn_epochs=2, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def _joint_config(problem='third_third', **overrides):
    values = dict(stage='joint', problem=problem, lr=1e-3, batch_size=4, frozen_epochs=1, joint_epochs=1, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def _third_third_pairs():
    pairs = []
    for t in (1, 2, 3):
        pairs.append(ExamplePair(Problem.THIRD_THIRD, PersonInstance('paired', 'tp1', t, 2),
                                 PersonInstance('paired', 'fp1', t, 2), 1))
        pairs.append(ExamplePair(Problem.THIRD_THIRD, PersonInstance('paired', 'tp1', t, 1),
                                 PersonInstance('paired', 'fp1', t, 2), 0))
    return pairs


def _third_first_pairs():
    pairs = []
    for t in (1, 2, 3):
        pairs.append(ExamplePair(Problem.THIRD_FIRST, PersonInstance('paired', 'tp1', t, 1),
                                 FirstPersonWindow('paired', 'fp1', t, 1), 1))
        pairs.append(ExamplePair(Problem.THIRD_FIRST, PersonInstance('paired', 'tp1', t, 2),
                                 FirstPersonWindow('paired', 'fp1', t, 1), 0))
    return pairs


def test_instance_samples_require_previous_visibility(small_dataset):
    samples = instance_samples(small_dataset)
    # fp1 与 fp2 各看到 1 人，tp1 看到 2 人，每帧都可见
    assert len(samples) == 6 * 4
    assert samples == sorted(samples, key=lambda s: (s.scene_id, s.view_id, s.frame_index, s.identity))


def test_iter_batches_is_a_permutation():
    items = list(range(10))
    batches = list(iter_batches(items, 4, seed=1, epoch=0))
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(sum(batches, [])) == items
    assert batches == list(iter_batches(items, 4, seed=1, epoch=0))
    assert batches != list(iter_batches(items, 4, seed=1, epoch=1))


def test_predicted_premask_at_first_frame_is_ground_truth(small_dataset, seg_config):
    net = build_network(seg_config)
    seq = small_dataset['paired']['tp1']
    mask = predicted_premask(net, seq, 0, 1, seg_config.flow_stack)
    assert torch.equal(torch.from_numpy(mask.data), torch.from_numpy(seq.gt_mask(0, 1).data))
    assert predicted_premask(net, seq, 3, 1, seg_config.flow_stack).data.shape == (64, 64)


def test_switch_epoch():
    assert _fcn_config(fcn_epochs=30).switch_epoch == 15
    assert _fcn_config(fcn_epochs=2).switch_epoch == 1


def test_invalid_train_config():
    with pytest.raises(ParameterError):
        TrainConfig(stage='warmup')
    with pytest.raises(ParameterError):
        TrainConfig(lr=0.0)


def test_fcn_stage_is_deterministic(small_dataset, seg_config, tmp_path):
    net_a, history_a = train_fcn_stage(build_network(seg_config), small_dataset, _fcn_config(), str(tmp_path))
    net_b, history_b = train_fcn_stage(build_network(seg_config), small_dataset, _fcn_config())
    assert parameter_checksum(net_a) == parameter_checksum(net_b)
    assert history_a.losses == history_b.losses
    assert [record.phase for record in history_a.epochs] == ['ground_truth', 'predicted']
    assert os.path.exists(tmp_path / 'fcn_epoch_001.cvck')
    assert os.path.exists(tmp_path / 'fcn_epoch_002.cvck')
    with open(tmp_path / TRAIN_LOG_NAME, encoding='utf-8') as f:
        log = json.load(f)
    assert [epoch['loss'] for epoch in log['epochs']] == history_a.losses


def test_fcn_stage_changes_parameters(small_dataset, seg_config):
    net = build_network(seg_config)
    before = parameter_checksum(net)
    train_fcn_stage(net, small_dataset, _fcn_config(fcn_epochs=1))
    assert parameter_checksum(net) != before


def test_frozen_phase_leaves_segmentation_net_bitwise_unchanged(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    head_before = parameter_checksum(match_head)
    _, _, history = train_joint_stage(net, match_head, _third_third_pairs(), small_dataset,
                                      _joint_config(frozen_epochs=2, joint_epochs=0))
    assert history.fcn_checksums['start'] == history.fcn_checksums['after_frozen']
    assert parameter_checksum(net) == history.fcn_checksums['start']
    assert parameter_checksum(match_head) != head_before
    assert all(param.requires_grad for param in net.parameters())


def test_joint_phase_updates_segmentation_net(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    _, _, history = train_joint_stage(net, match_head, _third_third_pairs(), small_dataset, _joint_config())
    assert [record.phase for record in history.epochs] == ['frozen', 'joint']
    assert parameter_checksum(net) != history.fcn_checksums['after_frozen']


def test_joint_stage_is_deterministic(small_dataset, seg_config):
    checksums = []
    for _ in range(2):
        net = build_network(seg_config)
        match_head = build_match_head(seg_config, tiny_match_config('third_first'))
        train_joint_stage(net, match_head, _third_first_pairs(), small_dataset, _joint_config('third_first'))
        checksums.append((parameter_checksum(net), parameter_checksum(match_head)))
    assert checksums[0] == checksums[1]


def test_third_first_trains_first_person_encoder(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config('third_first'))
    before = parameter_checksum(match_head.fp_encoder)
    train_joint_stage(net, match_head, _third_first_pairs(), small_dataset,
                      _joint_config('third_first', frozen_epochs=1, joint_epochs=0))
    assert parameter_checksum(match_head.fp_encoder) != before


def test_empty_pairs_are_rejected(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    with pytest.raises(EmptyDatasetError):
        train_joint_stage(net, match_head, [], small_dataset, _joint_config())


def test_identical_positive_pair_has_zero_siamese_loss(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    inst = PersonInstance('paired', 'tp1', 2, 1)
    with torch.no_grad():
        _, l_siam = pair_losses(net, match_head, small_dataset,
                                [ExamplePair(Problem.THIRD_THIRD, inst, inst, 1)], train_mode=False)
    assert l_siam.item() == 0.0


def test_gradients_reach_both_networks(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    l_seg, l_siam = pair_losses(net, match_head, small_dataset, _third_third_pairs(), train_mode=True)
    (l_seg + 0.1 * l_siam).backward()
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in net.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in match_head.parameters())



def test_third_third_losses_are_symmetric_under_side_swap(small_dataset, seg_config):
    net = build_network(seg_config, init_seed=1)
    match_head = build_match_head(seg_config, tiny_match_config(), init_seed=1)
    pairs = _third_third_pairs()
    swapped = [ExamplePair(pair.problem, pair.side_b, pair.side_a, pair.label) for pair in pairs]
    with torch.no_grad():
        l_seg, l_siam = pair_losses(net, match_head, small_dataset, pairs, train_mode=False)
        l_seg_swapped, l_siam_swapped = pair_losses(net, match_head, small_dataset, swapped, train_mode=False)
    assert abs(l_siam.item() - l_siam_swapped.item()) <= 1e-6 * max(1.0, abs(l_siam.item()))
    assert abs(l_seg.item() - l_seg_swapped.item()) <= 1e-6 * max(1.0, abs(l_seg.item()))


def test_joint_loss_weights_the_contrastive_term(small_dataset, seg_config):
    net = build_network(seg_config)
    match_head = build_match_head(seg_config, tiny_match_config())
    _, _, history = train_joint_stage(net, match_head, _third_third_pairs(), small_dataset,
                                      _joint_config(frozen_epochs=1, joint_epochs=1, loss_weight=0.5))
    frozen, joint = history.epochs
    assert frozen.loss == pytest.approx(frozen.siam_loss, rel=1e-6)
    assert joint.loss == pytest.approx(joint.seg_loss + 0.5 * joint.siam_loss, rel=1e-5)


@pytest.mark.slow
def test_fcn_stage_reduces_loss(small_dataset, seg_config):
    config = _fcn_config(fcn_epochs=20, lr=1e-3, premask_switch=1.0)
    _, history = train_fcn_stage(build_network(seg_config), small_dataset, config)
    assert history.losses[-1] < history.losses[0]


@pytest.mark.slow
def test_desk_backbone_overfits_one_scene():
    preset = Config().get_preset('desk')
    seg_config = SegNetConfig.from_dict(preset['segnet'])
    dataset = as_dataset(desk_scene(num_frames=8))
    config = TrainConfig.from_section(preset['train'], 'fcn')
    assert config.fcn_epochs == 30
    net, _ = train_fcn_stage(build_network(seg_config), dataset, config)
    report, _ = evaluate_dataset(dataset, 'third_third', net=net, threshold=config.threshold)
    assert report.mean_iou >= 0.90
