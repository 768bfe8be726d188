"""
训练样本组装
把内存中的序列（import_dataset 的结果）转成网络输入张量
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence as Seq, Tuple

import numpy as np
import torch

from core.errors import ViewLookupError
from core.types import ExamplePair, FirstPersonWindow, Mask, PersonInstance, Sequence, SoftMask
from core.validation import DEFAULT_THRESHOLD, threshold_mask
from networks.matchnet import box_masks, first_person_inputs
from networks.segnet import SegNet, assemble_inputs, forward

Dataset = Dict[str, Dict[str, Sequence]]


@dataclass(frozen=True)
class InstanceSample:
    """单人分割样本：某场景某视角第 t 帧中的一个人"""

    scene_id: str
    view_id: str
    frame_index: int
    identity: int


@dataclass
class InstanceBatch:
    visual: torch.Tensor
    motion: torch.Tensor
    gt: torch.Tensor
    boxes: torch.Tensor


def lookup_view(dataset: Dataset, scene_id: str, view_id: str) -> Sequence:
    try:
        return dataset[scene_id][view_id]
    except KeyError:
        raise ViewLookupError(f"数据集中没有 {scene_id}/{view_id}")


def instance_samples(dataset: Dataset) -> List[InstanceSample]:
    """所有可训练的单人样本：第 t 帧可见，且 t>0 时上一帧也可见"""
    samples = []
    for scene_id in sorted(dataset):
        for view_id in sorted(dataset[scene_id]):
            seq = dataset[scene_id][view_id]
            for t in range(seq.num_frames):
                previous = set(seq.identities_at(t - 1)) if t > 0 else None
                for identity in seq.identities_at(t):
                    if previous is None or identity in previous:
                        samples.append(InstanceSample(scene_id, view_id, t, identity))
    return samples


def ground_truth_premask(seq: Sequence, t: int, identity: int) -> Mask:
    """真值前掩码：上一帧的真值（第 0 帧用自身真值）"""
    return seq.gt_mask(max(t - 1, 0), identity)


def predicted_premask(net: SegNet, seq: Sequence, t: int, identity: int, flow_stack: int,
                      threshold: float = DEFAULT_THRESHOLD) -> Mask:
    """
    估计前掩码：用网络在第 t-1 帧上的预测（其前掩码取 t-2 帧真值）二值化
    第 0 帧没有上一帧，仍使用真值
    """
    if t == 0:
        return seq.gt_mask(0, identity)
    previous = ground_truth_premask(seq, t - 1, identity)
    visual, motion = assemble_inputs(seq.frames, seq.flows, t - 1, previous, flow_stack)
    was_training = net.training
    with torch.no_grad():
        output = forward(net, visual[None], motion[None], train_mode=False)
    net.train(was_training)
    soft = SoftMask.from_probs(output.probs[0].numpy())
    return threshold_mask(soft, threshold)


def instance_batch(items: Seq[Tuple[Sequence, int, int, Mask]], flow_stack: int) -> InstanceBatch:
    """items: (序列, 帧序号, 身份, 前掩码)"""
    visuals, motions, gts, boxes = [], [], [], []
    for seq, t, identity, pre_mask in items:
        visual, motion = assemble_inputs(seq.frames, seq.flows, t, pre_mask, flow_stack)
        gt = seq.gt_mask(t, identity)
        visuals.append(visual)
        motions.append(motion)
        gts.append(torch.from_numpy(gt.data.astype(np.float32)))
        boxes.append(gt.bounding_box())
    height, width = gts[0].shape
    return InstanceBatch(
        visual=torch.stack(visuals),
        motion=torch.stack(motions),
        gt=torch.stack(gts),
        boxes=box_masks(boxes, height, width),
    )


def person_side_batch(dataset: Dataset, instances: Seq[PersonInstance], flow_stack: int,
                      premask_fn: Optional[Callable[[Sequence, int, int], Mask]] = None) -> InstanceBatch:
    """样本对中第三人称一侧的输入"""
    premask_fn = premask_fn or ground_truth_premask
    items = []
    for inst in instances:
        seq = lookup_view(dataset, inst.scene_id, inst.view_id)
        items.append((seq, inst.frame_index, inst.identity, premask_fn(seq, inst.frame_index, inst.identity)))
    return instance_batch(items, flow_stack)


def first_person_batch(dataset: Dataset, windows: Seq[FirstPersonWindow],
                       flow_stack: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """样本对中第一人称一侧的输入"""
    frames, flows = [], []
    for window in windows:
        seq = lookup_view(dataset, window.scene_id, window.view_id)
        frame_in, flow_in = first_person_inputs(seq.frames, seq.flows, window.frame_index, flow_stack)
        frames.append(frame_in)
        flows.append(flow_in)
    return torch.stack(frames), torch.stack(flows)


def pair_labels(pairs: Seq[ExamplePair]) -> torch.Tensor:
    return torch.tensor([pair.label for pair in pairs], dtype=torch.float32)


def iter_batches(items: Seq, batch_size: int, seed: int, epoch: int) -> Iterator[List]:
    """按 (seed, epoch) 确定性打乱后分批"""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(items))
    for start in range(0, len(order), batch_size):
        yield [items[int(i)] for i in order[start:start + batch_size]]
