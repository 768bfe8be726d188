"""
两阶段训练
(a) 只训练分割网络：逐人样本，前半程用真值前掩码，后半程用网络对上一帧的估计
(b) 联合训练：前若干轮冻结分割网络只训练匹配分支，之后 L_seg + λ·L_siam 一起训练
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Sequence as Seq, Tuple

import torch
from tqdm import tqdm

from config import config
from core.errors import EmptyDatasetError, ParameterError
from core.types import ExamplePair, FirstPersonWindow, Problem
from networks.checkpoint import save_checkpoint
from networks.losses import contrastive_loss, seg_loss
from networks.matchnet import MatchHead
from networks.segnet import SegNet, forward
from training.optimizer import MomentumSGD
from training.samples import (
    Dataset, ground_truth_premask, instance_batch, instance_samples, iter_batches,
    lookup_view, pair_labels, person_side_batch, first_person_batch, predicted_premask,
)

TRAIN_LOG_NAME = 'train_log.json'


@dataclass
class TrainConfig:
    """训练配置"""

    stage: str = 'fcn'
    problem: Problem = Problem.THIRD_THIRD
    lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    fcn_epochs: int = 30
    frozen_epochs: int = 20
    joint_epochs: int = 40
    loss_weight: float = 0.1
    premask_switch: float = 0.5
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.problem = Problem.parse(self.problem)
        if self.stage not in ('fcn', 'joint'):
            raise ParameterError(f"未知的训练阶段: {self.stage}")
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.batch_size < 1:
            raise ParameterError(f"训练参数非法: lr={self.lr}, momentum={self.momentum}, "
                                 f"weight_decay={self.weight_decay}, batch_size={self.batch_size}")
        if self.fcn_epochs < 1 or self.frozen_epochs < 0 or self.joint_epochs < 0 or \
                self.frozen_epochs + self.joint_epochs < 1:
            raise ParameterError(f"训练轮数非法: fcn={self.fcn_epochs}, frozen={self.frozen_epochs}, "
                                 f"joint={self.joint_epochs}")

    @classmethod
    def from_section(cls, section: Dict, stage: str, problem=Problem.THIRD_THIRD,
                     threshold: float = 0.5) -> 'TrainConfig':
        """由配置文件的 train 段构造；学习率按阶段取 lr_fcn 或 lr_joint"""
        return cls(
            stage=stage,
            problem=problem,
            lr=section['lr_fcn'] if stage == 'fcn' else section['lr_joint'],
            momentum=section['momentum'],
            weight_decay=section['weight_decay'],
            batch_size=section['batch_size'],
            fcn_epochs=section['fcn_epochs'],
            frozen_epochs=section['frozen_epochs'],
            joint_epochs=section['joint_epochs'],
            loss_weight=section['loss_weight'],
            premask_switch=section['premask_switch'],
            threshold=threshold,
            seed=section['seed'],
        )

    @property
    def switch_epoch(self) -> int:
        """从该轮（从 0 计）起改用估计前掩码"""
        return int(self.fcn_epochs * self.premask_switch)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['problem'] = self.problem.value
        return data


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    seg_loss: float = 0.0
    siam_loss: float = 0.0
    timestamp: str = ''
    checkpoint: str = ''


@dataclass
class TrainHistory:
    """训练记录，同时写入 JSON 训练日志"""

    stage: str
    problem: str
    epochs: List[EpochRecord] = field(default_factory=list)
    fcn_checksums: Dict[str, str] = field(default_factory=dict)

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.epochs]

    def to_dict(self) -> Dict:
        return {
            'stage': self.stage,
            'problem': self.problem,
            'epochs': [asdict(record) for record in self.epochs],
            'fcn_checksums': self.fcn_checksums,
        }

    def save(self, out_dir: str, train_config: TrainConfig):
        data = self.to_dict()
        data['train_config'] = train_config.to_dict()
        with open(os.path.join(out_dir, TRAIN_LOG_NAME), 'w', encoding='utf-8') as f:
            json.dump(data, f, ensure_ascii=False, indent=2)


def parameter_checksum(module: torch.nn.Module) -> str:
    """参数与缓冲区的逐字节 SHA-256"""
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode('utf-8'))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _checkpoint_config(net: SegNet, match_head: Optional[MatchHead], train_config: TrainConfig,
                       epoch: int) -> Dict:
    data = {
        'segnet': net.config.to_dict(),
        'train': train_config.to_dict(),
        'stage': train_config.stage,
        'epoch': epoch,
    }
    if match_head is not None:
        data['match'] = match_head.config.to_dict()
    return data


def _save_epoch(out_dir: Optional[str], net: SegNet, match_head: Optional[MatchHead],
                train_config: TrainConfig, epoch: int) -> str:
    if not out_dir:
        return ''
    filepath = os.path.join(out_dir, f"{train_config.stage}_epoch_{epoch:03d}.cvck")
    save_checkpoint(filepath, net, match_head, _checkpoint_config(net, match_head, train_config, epoch))
    return filepath


def train_fcn_stage(net: SegNet, dataset: Dataset, train_config: TrainConfig,
                    out_dir: Optional[str] = None) -> Tuple[SegNet, TrainHistory]:
    """
    阶段 (a)：只用分割损失训练分割网络

    Args:
        dataset: {scene_id: {view_id: Sequence}}，需带真值掩码
        out_dir: 若给出则每轮写检查点与训练日志
    """
    samples = instance_samples(dataset)
    if not samples:
        raise EmptyDatasetError("没有可用于分割训练的样本")

    flow_stack = net.config.flow_stack
    optimizer = MomentumSGD(net.parameters(), lr=train_config.lr, momentum=train_config.momentum,
                            weight_decay=train_config.weight_decay)
    history = TrainHistory(stage='fcn', problem='')
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    print(f" 阶段(a): {len(samples)} 个样本, {train_config.fcn_epochs} 轮, 前掩码第 {train_config.switch_epoch + 1} 轮起改用估计值")
    torch.manual_seed(train_config.seed)

    for epoch in tqdm(range(train_config.fcn_epochs), desc="分割训练", unit="epoch"):
        use_predicted = epoch >= train_config.switch_epoch
        total = 0.0
        for batch_index, chunk in enumerate(iter_batches(samples, train_config.batch_size, train_config.seed, epoch)):
            items = []
            for sample in chunk:
                seq = lookup_view(dataset, sample.scene_id, sample.view_id)
                if use_predicted:
                    pre_mask = predicted_premask(net, seq, sample.frame_index, sample.identity, flow_stack,
                                                 train_config.threshold)
                else:
                    pre_mask = ground_truth_premask(seq, sample.frame_index, sample.identity)
                items.append((seq, sample.frame_index, sample.identity, pre_mask))
            batch = instance_batch(items, flow_stack)

            optimizer.zero_grad()
            output = forward(net, batch.visual, batch.motion, train_mode=True)
            loss = seg_loss(output.foreground, batch.gt)
            loss.backward()
            optimizer.step()
            total += float(loss)
            if config.enable_debug_mode:
                print(f" [debug] epoch {epoch + 1} batch {batch_index + 1}: L_seg={float(loss):.4f}")

        mean_loss = total / len(samples)
        checkpoint = _save_epoch(out_dir, net, None, train_config, epoch + 1)
        history.epochs.append(EpochRecord(
            epoch=epoch + 1,
            phase='predicted' if use_predicted else 'ground_truth',
            loss=mean_loss,
            seg_loss=mean_loss,
            timestamp=datetime.now().isoformat(),
            checkpoint=checkpoint,
        ))
        if out_dir:
            history.save(out_dir, train_config)

    print(f" 阶段(a)完成: 首轮平均损失 {history.losses[0]:.4f}, 末轮平均损失 {history.losses[-1]:.4f}")
    return net, history


def _set_fcn_frozen(net: SegNet, frozen: bool):
    for param in net.parameters():
        param.requires_grad_(not frozen)


def pair_losses(net: SegNet, match_head: MatchHead, dataset: Dataset, pairs: Seq[ExamplePair],
                train_mode: bool) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    一批样本对的 (L_seg, L_siam)
    第三人称一侧经分割网络、注意力重加权与嵌入卷积；第一人称一侧经第一人称编码器
    """
    flow_stack = net.config.flow_stack
    problem = match_head.config.problem
    labels = pair_labels(pairs)
    side_a = person_side_batch(dataset, [pair.side_a for pair in pairs], flow_stack)

    if problem == Problem.THIRD_THIRD:
        side_b = person_side_batch(dataset, [pair.side_b for pair in pairs], flow_stack)
        # 两侧拼成一个批次，共用同一次前向
        visual = torch.cat([side_a.visual, side_b.visual])
        motion = torch.cat([side_a.motion, side_b.motion])
        gt = torch.cat([side_a.gt, side_b.gt])
        boxes = torch.cat([side_a.boxes, side_b.boxes])
        output = forward(net, visual, motion, train_mode=train_mode)
        embeddings = match_head.embed_output(output, boxes)
        emb_a, emb_b = embeddings.split(len(pairs))
    else:
        windows: List[FirstPersonWindow] = [pair.side_b for pair in pairs]
        frames_in, flows_in = first_person_batch(dataset, windows, flow_stack)
        gt = side_a.gt
        output = forward(net, side_a.visual, side_a.motion, train_mode=train_mode)
        emb_a = match_head.embed_output(output, side_a.boxes)
        emb_b = match_head.embed_first_person(frames_in, flows_in)

    l_seg = seg_loss(output.foreground, gt)
    l_siam = contrastive_loss(emb_a, emb_b, labels, match_head.config.margin)
    return l_seg, l_siam


def train_joint_stage(net: SegNet, match_head: MatchHead, pairs: Seq[ExamplePair], dataset: Dataset,
                      train_config: TrainConfig,
                      out_dir: Optional[str] = None) -> Tuple[SegNet, MatchHead, TrainHistory]:
    """
    阶段 (b)：冻结阶段只更新匹配分支（分割网络逐位不变，批归一化统计也不更新），
    之后以 L_seg + λ·L_siam 联合更新全部参数
    """
    if not pairs:
        raise EmptyDatasetError("联合训练的样本对列表为空")

    optimizer = MomentumSGD(list(net.parameters()) + list(match_head.parameters()), lr=train_config.lr,
                            momentum=train_config.momentum, weight_decay=train_config.weight_decay)
    history = TrainHistory(stage='joint', problem=match_head.config.problem.value)
    history.fcn_checksums['start'] = parameter_checksum(net)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    total_epochs = train_config.frozen_epochs + train_config.joint_epochs
    print(f" 阶段(b): {len(pairs)} 个样本对, 冻结 {train_config.frozen_epochs} 轮 + 联合 {train_config.joint_epochs} 轮")
    torch.manual_seed(train_config.seed)
    match_head.train(True)

    try:
        for epoch in tqdm(range(total_epochs), desc="联合训练", unit="epoch"):
            frozen = epoch < train_config.frozen_epochs
            _set_fcn_frozen(net, frozen)
            sums = {'loss': 0.0, 'seg': 0.0, 'siam': 0.0}

            for batch_index, chunk in enumerate(iter_batches(pairs, train_config.batch_size, train_config.seed, epoch)):
                optimizer.zero_grad()
                l_seg, l_siam = pair_losses(net, match_head, dataset, chunk, train_mode=not frozen)
                loss = l_siam if frozen else l_seg + train_config.loss_weight * l_siam
                loss.backward()
                optimizer.step()
                sums['loss'] += float(loss)
                sums['seg'] += float(l_seg)
                sums['siam'] += float(l_siam)
                if config.enable_debug_mode:
                    print(f" [debug] epoch {epoch + 1} batch {batch_index + 1}: "
                          f"L_seg={float(l_seg):.4f} L_siam={float(l_siam):.4f}")

            if frozen and epoch + 1 == train_config.frozen_epochs:
                history.fcn_checksums['after_frozen'] = parameter_checksum(net)

            checkpoint = _save_epoch(out_dir, net, match_head, train_config, epoch + 1)
            history.epochs.append(EpochRecord(
                epoch=epoch + 1,
                phase='frozen' if frozen else 'joint',
                loss=sums['loss'] / len(pairs),
                seg_loss=sums['seg'] / len(pairs),
                siam_loss=sums['siam'] / len(pairs),
                timestamp=datetime.now().isoformat(),
                checkpoint=checkpoint,
            ))
            if out_dir:
                history.save(out_dir, train_config)
    finally:
        _set_fcn_frozen(net, False)

    print(f" 阶段(b)完成: 末轮平均损失 {history.losses[-1]:.4f}")
    return net, match_head, history
