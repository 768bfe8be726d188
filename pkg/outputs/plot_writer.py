"""
评估结果图表
- IoU 随序列长度变化曲线、PR 曲线：SVG + CSV
- 逐帧掩码叠加图：PNG
"""

import os
from typing import List, Sequence as Seq

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from PIL import Image

from core.errors import ShapeError
from core.types import Frame, Mask
from processors.metrics import EvalReport

OVERLAY_COLOR = np.array([230, 40, 40], dtype=np.float32)
OVERLAY_ALPHA = 0.5


def report_label(report: EvalReport) -> str:
    """图例名称"""
    if report.baseline:
        return report.baseline
    parts = [report.model_id or 'model', report.problem]
    if report.reweight_mode:
        parts.append(report.reweight_mode)
    return ' / '.join(parts)


def iou_table(reports: Seq[EvalReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for i, value in enumerate(report.iou_by_length):
            rows.append({'label': report_label(report), 'sequence_length': i + 2,
                         'frame_index': i + 1, 'frame_iou': report.iou_by_frame[i], 'mean_iou': value})
    return pd.DataFrame(rows, columns=['label', 'sequence_length', 'frame_index', 'frame_iou', 'mean_iou'])


def pr_table(reports: Seq[EvalReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for rank, (precision, recall) in enumerate(report.pr_points, start=1):
            rows.append({'label': report_label(report), 'rank': rank, 'precision': precision, 'recall': recall})
    return pd.DataFrame(rows, columns=['label', 'rank', 'precision', 'recall'])


def write_plots(reports, out_dir: str) -> List[str]:
    """写出 IoU/PR 曲线的 SVG 与 CSV，返回生成的文件列表"""
    if isinstance(reports, EvalReport):
        reports = [reports]
    os.makedirs(out_dir, exist_ok=True)
    written = []

    ious = iou_table(reports)
    csv_path = os.path.join(out_dir, 'iou_vs_length.csv')
    ious.to_csv(csv_path, index=False)
    written.append(csv_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, group in ious.groupby('label', sort=False):
        ax.plot(group['sequence_length'], group['mean_iou'], marker='o', markersize=3, label=label)
    ax.set_xlabel('sequence length (frames)')
    ax.set_ylabel('mean IoU')
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    if not ious.empty:
        ax.legend(loc='lower left', fontsize=8)
    svg_path = os.path.join(out_dir, 'iou_vs_length.svg')
    fig.savefig(svg_path, format='svg', bbox_inches='tight')
    plt.close(fig)
    written.append(svg_path)

    prs = pr_table(reports)
    if not prs.empty:
        csv_path = os.path.join(out_dir, 'pr_curve.csv')
        prs.to_csv(csv_path, index=False)
        written.append(csv_path)

        fig, ax = plt.subplots(figsize=(5, 5))
        for label, group in prs.groupby('label', sort=False):
            ax.plot(group['recall'], group['precision'], label=label)
        ax.set_xlabel('recall')
        ax.set_ylabel('precision')
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
        ax.legend(loc='lower left', fontsize=8)
        svg_path = os.path.join(out_dir, 'pr_curve.svg')
        fig.savefig(svg_path, format='svg', bbox_inches='tight')
        plt.close(fig)
        written.append(svg_path)

    return written


def overlay_frame(frame: Frame, mask: Mask, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """把掩码以半透明红色叠加到帧上，返回 uint8 RGB"""
    if (frame.height, frame.width) != (mask.height, mask.width):
        raise ShapeError(f"帧尺寸 {frame.width}x{frame.height} 与掩码尺寸 {mask.width}x{mask.height} 不一致")
    rgb = frame.to_uint8().astype(np.float32)
    selected = mask.data.astype(bool)
    rgb[selected] = (1.0 - alpha) * rgb[selected] + alpha * OVERLAY_COLOR
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def write_overlays(frames: Seq[Frame], masks: Seq[Mask], out_dir: str, prefix: str = 'overlay') -> List[str]:
    """逐帧写出叠加图 PNG"""
    if len(frames) != len(masks):
        raise ShapeError(f"帧数 {len(frames)} 与掩码数 {len(masks)} 不一致")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for t, (frame, mask) in enumerate(zip(frames, masks)):
        filepath = os.path.join(out_dir, f"{prefix}_{t:04d}.png")
        Image.fromarray(overlay_frame(frame, mask)).save(filepath, format='PNG')
        written.append(filepath)
    return written
