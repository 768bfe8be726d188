import json
import os

import pytest

from main import dispatch
from networks.checkpoint import MATCH_PREFIX, load_checkpoint
from processors.metrics import EvalReport

TINY_CONFIG = {
    'segnet': {'flow_stack': 2, 'stage_widths': [4, 4, 8, 8, 8], 'head_channels': 8},
    'match': {'embed_channels': 8, 'head_depth': 1},
    'train': {'batch_size': 8, 'lr_fcn': 1e-3, 'lr_joint': 1e-3},
}


@pytest.fixture(scope='module')
def generated(tmp_path_factory):
    root = str(tmp_path_factory.mktemp('gen') / 'dataset')
    code = dispatch(['gen', '--out', root, '--seed', '1', '--num-scenes', '3', '--num-train', '2',
                     '--num-frames', '6'])
    assert code == 0
    return root


@pytest.fixture(scope='module')
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp('cfg') / 'tiny.json'
    path.write_text(json.dumps(TINY_CONFIG), encoding='utf-8')
    return str(path)


def test_gen_writes_manifest_and_run_record(generated):
    with open(os.path.join(generated, 'manifest.json'), encoding='utf-8') as f:
        manifest = json.load(f)
    assert [scene['split'] for scene in manifest['scenes']] == ['train', 'train', 'test']
    with open(os.path.join(generated, 'run.json'), encoding='utf-8') as f:
        run = json.load(f)
    assert run['seed'] == 1
    assert run['config']['scene']['num_frames'] == 6


def test_gen_is_deterministic(tmp_path):
    for name in ('a', 'b'):
        assert dispatch(['gen', '--out', str(tmp_path / name), '--seed', '5', '--num-scenes', '1',
                         '--num-train', '1', '--num-frames', '3']) == 0
    with open(tmp_path / 'a' / 'manifest.json', 'rb') as fa, open(tmp_path / 'b' / 'manifest.json', 'rb') as fb:
        assert fa.read() == fb.read()
    with open(tmp_path / 'a' / 'scenes' / 'scene_000' / 'tp1' / 'flow_0001.cvfl', 'rb') as fa, \
            open(tmp_path / 'b' / 'scenes' / 'scene_000' / 'tp1' / 'flow_0001.cvfl', 'rb') as fb:
        assert fa.read() == fb.read()


def test_usage_errors_exit_with_two(tmp_path, generated):
    assert dispatch(['fly']) == 2
    assert dispatch(['gen', '--out', str(tmp_path), '--seed', '1', '--colour', 'red']) == 2
    assert dispatch(['train', '--stage', 'joint', '--data', generated, '--out', str(tmp_path / 'ck'), '--seed', '0']) == 2
    assert dispatch(['train', '--stage', 'fcn', '--data', generated, '--out', str(tmp_path / 'ck')]) == 2
    assert dispatch(['gen', '--out', str(tmp_path / 'g')]) == 2
    assert dispatch(['eval', '--data', generated, '--report', str(tmp_path / 'r.json')]) == 2


def test_bad_config_file_exits_with_two(tmp_path, generated):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps({'segnet': {'depth': 3}}), encoding='utf-8')
    assert dispatch(['eval', '--config', str(path), '--data', generated, '--baseline', 'copy-first',
                     '--report', str(tmp_path / 'r.json')]) == 2


def test_missing_dataset_exits_with_three(tmp_path):
    assert dispatch(['eval', '--data', str(tmp_path / 'nowhere'), '--baseline', 'copy-first',
                     '--report', str(tmp_path / 'r.json')]) == 3


def test_eval_copy_first_and_plot(tmp_path, generated):
    report_path = str(tmp_path / 'eval' / 'report.json')
    assert dispatch(['eval', '--data', generated, '--baseline', 'copy-first', '--report', report_path]) == 0
    report = EvalReport.load(report_path)
    assert report.baseline == 'copy-first'
    assert 0.0 <= report.mean_iou <= 1.0
    assert len(report.iou_by_frame) == 5
    assert os.path.isdir(os.path.join(tmp_path, 'eval', 'predictions'))

    plots = tmp_path / 'plots'
    assert dispatch(['plot', '--report', report_path, '--out', str(plots)]) == 0
    assert (plots / 'iou_vs_length.svg').exists()
    assert (plots / 'iou_vs_length.csv').exists()
    assert (plots / 'index.html').exists()
    overlays = [name for _, _, files in os.walk(plots / 'overlays') for name in files]
    assert overlays and all(name.endswith('.png') for name in overlays)


def test_train_eval_round_trip(tmp_path, generated, tiny_config):
    fcn_dir = str(tmp_path / 'fcn')
    assert dispatch(['train', '--stage', 'fcn', '--config', tiny_config, '--data', generated, '--out', fcn_dir,
                     '--fcn-epochs', '1', '--seed', '0']) == 0
    fcn_ckpt = os.path.join(fcn_dir, 'fcn_final.cvck')
    assert os.path.exists(fcn_ckpt)
    assert os.path.exists(os.path.join(fcn_dir, 'train_log.json'))

    joint_dir = str(tmp_path / 'joint')
    assert dispatch(['train', '--stage', 'joint', '--config', tiny_config, '--data', generated,
                     '--ckpt', fcn_ckpt, '--out', joint_dir,
                     '--frozen-epochs', '1', '--joint-epochs', '1', '--neg-ratio', '1', '--seed', '0']) == 0
    joint_ckpt = os.path.join(joint_dir, 'joint_final.cvck')
    checkpoint = load_checkpoint(joint_ckpt)
    assert checkpoint.has_namespace(MATCH_PREFIX)
    assert checkpoint.config['match']['problem'] == 'third_third'

    report_path = str(tmp_path / 'report.json')
    assert dispatch(['eval', '--ckpt', joint_ckpt, '--data', generated, '--problem', 'third-third',
                     '--report', report_path]) == 0
    report = EvalReport.load(report_path)
    assert report.problem == 'third_third'
    assert report.model_id == 'joint_final.cvck'

    # 问题类型与检查点不一致
    assert dispatch(['eval', '--ckpt', joint_ckpt, '--data', generated, '--problem', 'third-first',
                     '--report', report_path]) == 2


def test_corrupt_checkpoint_exits_with_three(tmp_path, generated):
    path = tmp_path / 'broken.cvck'
    path.write_bytes(b'CVCK\x01\x00')
    assert dispatch(['eval', '--ckpt', str(path), '--data', generated, '--report', str(tmp_path / 'r.json')]) == 3


def _eval_report(data, report_path, *extra):
    assert dispatch(['eval', '--data', data, '--report', report_path, *extra]) == 0
    return EvalReport.load(report_path)


@pytest.mark.slow
def test_desk_benchmark_ordering(tmp_path):
    data = str(tmp_path / 'benchmark')
    assert dispatch(['gen', '--out', data, '--seed', '0']) == 0

    fcn_ckpts = {}
    for name, streams in (('two_stream', 'visual,motion'), ('flow_only', 'motion'), ('image_only', 'visual')):
        out = str(tmp_path / name)
        assert dispatch(['train', '--stage', 'fcn', '--data', data, '--out', out, '--streams', streams,
                         '--seed', '0']) == 0
        fcn_ckpts[name] = os.path.join(out, 'fcn_final.cvck')

    iou = {name: _eval_report(data, str(tmp_path / 'reports' / f'{name}.json'), '--ckpt', ckpt).mean_iou
           for name, ckpt in fcn_ckpts.items()}
    copy_first = _eval_report(data, str(tmp_path / 'reports' / 'copy_first.json'), '--baseline', 'copy-first')

    accuracies = {}
    for problem in ('third-third', 'third-first'):
        out = str(tmp_path / f'joint_{problem}')
        assert dispatch(['train', '--stage', 'joint', '--problem', problem, '--data', data,
                         '--ckpt', fcn_ckpts['two_stream'], '--out', out, '--seed', '0']) == 0
        report = _eval_report(data, str(tmp_path / 'reports' / f'joint_{problem}.json'),
                              '--ckpt', os.path.join(out, 'joint_final.cvck'), '--problem', problem)
        accuracies[problem] = report.acc
        if problem == 'third-third':
            iou['joint'] = report.mean_iou

    assert iou['two_stream'] > iou['flow_only'] > iou['image_only'] > copy_first.mean_iou
    assert iou['joint'] >= copy_first.mean_iou + 0.05
    assert iou['joint'] >= iou['image_only'] + 0.02
    assert accuracies['third-third'] >= 0.55
    assert accuracies['third-first'] >= 0.55
