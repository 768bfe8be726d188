"""
带动量的随机梯度下降
经典动量形式：g' = g + wd·p；v = μ·v + g'；p = p - lr·v
"""

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence as Seq

import torch
from torch.optim import Optimizer

from core.errors import ParameterError, ShapeError


@dataclass
class OptimizerState:
    """每个参数的速度缓冲区与步数"""

    velocities: List[Optional[torch.Tensor]] = field(default_factory=list)
    step: int = 0


def sgd_step(params: Seq[torch.Tensor], grads: Seq[Optional[torch.Tensor]], state: OptimizerState,
             lr: float, momentum: float, weight_decay: float) -> OptimizerState:
    """
    原地更新参数；grads 中为 None 的参数跳过（冻结参数保持逐位不变）
    """
    if lr <= 0 or momentum < 0 or weight_decay < 0:
        raise ParameterError(f"优化器参数非法: lr={lr}, momentum={momentum}, weight_decay={weight_decay}")
    if len(params) != len(grads):
        raise ShapeError(f"参数个数 {len(params)} 与梯度个数 {len(grads)} 不一致")
    if not state.velocities:
        state.velocities = [None] * len(params)
    elif len(state.velocities) != len(params):
        raise ShapeError(f"速度缓冲区个数 {len(state.velocities)} 与参数个数 {len(params)} 不一致")

    with torch.no_grad():
        for i, (param, grad) in enumerate(zip(params, grads)):
            if grad is None:
                continue
            if grad.shape != param.shape:
                raise ShapeError(f"第 {i} 个参数形状 {tuple(param.shape)} 与梯度形状 {tuple(grad.shape)} 不一致")
            g = grad.add(param, alpha=weight_decay) if weight_decay else grad.clone()
            velocity = state.velocities[i]
            if velocity is None:
                velocity = torch.zeros_like(param)
            velocity.mul_(momentum).add_(g)
            state.velocities[i] = velocity
            param.sub_(velocity, alpha=lr)

    state.step += 1
    return state


class MomentumSGD(Optimizer):
    """torch 优化器接口包装，内部调用 sgd_step"""

    def __init__(self, params: Iterable, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        if lr <= 0:
            raise ParameterError(f"学习率必须为正: {lr}")
        super().__init__(params, dict(lr=lr, momentum=momentum, weight_decay=weight_decay))
        self._states = [OptimizerState() for _ in self.param_groups]

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group, state in zip(self.param_groups, self._states):
            params = group['params']
            grads = [p.grad if p.requires_grad else None for p in params]
            sgd_step(params, grads, state, group['lr'], group['momentum'], group['weight_decay'])
        return loss

    @property
    def steps(self) -> int:
        return self._states[0].step if self._states else 0
