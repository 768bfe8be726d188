import os

import numpy as np
import pandas as pd
import pytest

from core.errors import ShapeError
from core.types import Frame, Mask
from outputs.plot_writer import overlay_frame, report_label, write_overlays, write_plots
from outputs.web_report import get_web_report_generator
from processors.metrics import EvalReport


def _report(**overrides):
    values = dict(problem='third_third', model_id='joint_final.cvck', dataset_id='desk', mean_iou=0.75,
                  iou_by_frame=[1.0, 0.5], iou_by_length=[1.0, 0.75], mean_ap=0.5, acc=1.0,
                  pr_points=[(1.0, 0.5), (0.5, 0.5), (2 / 3, 1.0)], reweight_mode='soft_attention')
    values.update(overrides)
    return EvalReport(**values)


def test_report_label():
    assert report_label(_report()) == 'joint_final.cvck / third_third / soft_attention'
    assert report_label(_report(baseline='copy-first')) == 'copy-first'


def test_write_plots_emits_svg_and_csv(tmp_path):
    reports = [_report(), _report(baseline='copy-first', mean_ap=None, acc=None, pr_points=[])]
    written = write_plots(reports, str(tmp_path))
    names = sorted(os.path.basename(path) for path in written)
    assert names == ['iou_vs_length.csv', 'iou_vs_length.svg', 'pr_curve.csv', 'pr_curve.svg']

    ious = pd.read_csv(tmp_path / 'iou_vs_length.csv')
    assert list(ious.columns) == ['label', 'sequence_length', 'frame_index', 'frame_iou', 'mean_iou']
    assert len(ious) == 4
    assert ious['sequence_length'].tolist()[:2] == [2, 3]

    prs = pd.read_csv(tmp_path / 'pr_curve.csv')
    assert len(prs) == 3
    assert prs['recall'].iloc[-1] == 1.0
    with open(tmp_path / 'pr_curve.svg', encoding='utf-8') as f:
        assert '<svg' in f.read()


def test_write_plots_without_matching_skips_pr(tmp_path):
    written = write_plots(_report(mean_ap=None, acc=None, pr_points=[]), str(tmp_path))
    assert sorted(os.path.basename(path) for path in written) == ['iou_vs_length.csv', 'iou_vs_length.svg']


def test_overlay_blends_mask_pixels():
    frame = Frame(np.zeros((2, 2, 3), dtype=np.float32))
    mask = Mask(np.array([[1, 0], [0, 0]], dtype=np.uint8))
    rgb = overlay_frame(frame, mask)
    assert rgb.dtype == np.uint8
    assert rgb[0, 0].tolist() == [115, 20, 20]
    assert rgb[1, 1].tolist() == [0, 0, 0]
    with pytest.raises(ShapeError):
        overlay_frame(frame, Mask.empty(3, 2))


def test_write_overlays(tmp_path):
    frames = [Frame(np.full((4, 4, 3), 0.5, dtype=np.float32))] * 3
    masks = [Mask.empty(4, 4)] * 3
    written = write_overlays(frames, masks, str(tmp_path), prefix='id1')
    assert [os.path.basename(p) for p in written] == ['id1_0000.png', 'id1_0001.png', 'id1_0002.png']
    with pytest.raises(ShapeError):
        write_overlays(frames, masks[:2], str(tmp_path))


def test_web_report(tmp_path):
    figures = write_plots([_report()], str(tmp_path))
    path = get_web_report_generator().generate_report([_report(), _report(baseline='copy-first')],
                                                      str(tmp_path), figures)
    assert path.endswith('index.html')
    with open(path, encoding='utf-8') as f:
        html = f.read()
    assert '75.0' in html
    assert 'copy-first' in html
    assert 'pr_curve.svg' in html
    assert 'iou_vs_length.csv' not in html
    assert 'class="best"' in html


def test_web_report_failure_returns_empty_path(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x', encoding='utf-8')
    assert get_web_report_generator().generate_report([_report()], str(blocker / 'sub')) == ''
