"""
损失函数与嵌入距离
分割损失为逐像素交叉熵求和，对比损失按元素计算后求和（不做平均）
"""

import torch

from core.errors import ParameterError, ShapeError

EPSILON = 1e-7


def _check_same_shape(name_a: str, a: torch.Tensor, name_b: str, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{name_a} 形状 {tuple(a.shape)} 与 {name_b} 形状 {tuple(b.shape)} 不一致")


def seg_loss(probs_fg: torch.Tensor, gt: torch.Tensor, eps: float = EPSILON) -> torch.Tensor:
    """
    前景概率的交叉熵，对批次与像素求和

    Args:
        probs_fg: 前景概率 (N, H, W)
        gt: 二值真值掩码 (N, H, W)
    """
    _check_same_shape('probs_fg', probs_fg, 'gt', gt)
    probs = probs_fg.clamp(eps, 1.0 - eps)
    gt = gt.to(probs.dtype)
    return -(gt * torch.log(probs) + (1.0 - gt) * torch.log(1.0 - probs)).sum()


def contrastive_loss(a: torch.Tensor, b: torch.Tensor, y: torch.Tensor, margin: float = 1.0) -> torch.Tensor:
    """
    按元素的对比损失：y·(a-b)² + (1-y)·max(m-|a-b|, 0)²，对 N、C、H、W 求和

    Args:
        a, b: 嵌入批次 (N, C, H, W)
        y: 标签 (N,)，1 表示同一人
    """
    _check_same_shape('a', a, 'b', b)
    if margin <= 0:
        raise ParameterError(f"margin 必须为正，实际为 {margin}")
    if y.dim() != 1 or y.shape[0] != a.shape[0]:
        raise ShapeError(f"y 形状应为 ({a.shape[0]},)，实际为 {tuple(y.shape)}")
    if not bool(((y == 0) | (y == 1)).all()):
        raise ParameterError(f"标签 y 只能取 0 或 1，实际为 {y.tolist()}")

    labels = y.to(a.dtype).view(-1, *([1] * (a.dim() - 1)))
    diff = a - b
    positive = diff.pow(2)
    negative = torch.clamp(margin - diff.abs(), min=0.0).pow(2)
    return (labels * positive + (1.0 - labels) * negative).sum()


def pair_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """平方差之和；输入为单个嵌入 (C, H, W) 时返回标量，为批次时返回 (N,)"""
    _check_same_shape('a', a, 'b', b)
    diff = (a - b).pow(2)
    if diff.dim() <= 3:
        return diff.sum()
    return diff.flatten(1).sum(dim=1)
