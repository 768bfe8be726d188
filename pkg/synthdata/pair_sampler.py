"""
训练样本对采样
正负样本按帧构造：同一时刻、不同视角
"""

import math
from itertools import combinations
from typing import Dict, List, Tuple

import numpy as np

from core.errors import EmptyDatasetError, ParameterError
from core.types import ExamplePair, FirstPersonWindow, PersonInstance, Problem
from dataset_store import DatasetManifest


def _eligible(view: Dict, t: int) -> List[int]:
    """可作为样本的身份：当前帧可见，且上一帧也可见（提供非空前帧掩码）"""
    visible = view['frames'][t]['visible']
    if t == 0:
        return sorted(visible)
    previous = set(view['frames'][t - 1]['visible'])
    return sorted(identity for identity in visible if identity in previous)


def _third_third_candidates(scene: Dict) -> Tuple[List[ExamplePair], List[ExamplePair]]:
    positives, negatives = [], []
    scene_id = scene['scene_id']
    for view_a, view_b in combinations(scene['views'], 2):
        for t in range(scene['num_frames']):
            ids_a = _eligible(view_a, t)
            ids_b = _eligible(view_b, t)
            for id_a in ids_a:
                inst_a = PersonInstance(scene_id, view_a['view_id'], t, id_a)
                for id_b in ids_b:
                    inst_b = PersonInstance(scene_id, view_b['view_id'], t, id_b)
                    label = int(id_a == id_b)
                    pair = ExamplePair(Problem.THIRD_THIRD, inst_a, inst_b, label)
                    (positives if label else negatives).append(pair)
    return positives, negatives


def _third_first_candidates(scene: Dict) -> Tuple[List[ExamplePair], List[ExamplePair]]:
    positives, negatives = [], []
    scene_id = scene['scene_id']
    for fp_view in scene['views']:
        wearer = fp_view['wearer_identity']
        if fp_view['camera_kind'] != 'first_person' or wearer is None:
            continue
        for other in scene['views']:
            if other['view_id'] == fp_view['view_id']:
                continue
            for t in range(scene['num_frames']):
                window = FirstPersonWindow(scene_id, fp_view['view_id'], t, wearer)
                for identity in _eligible(other, t):
                    inst = PersonInstance(scene_id, other['view_id'], t, identity)
                    label = int(identity == wearer)
                    pair = ExamplePair(Problem.THIRD_FIRST, inst, window, label)
                    (positives if label else negatives).append(pair)
    return positives, negatives


def sample_pairs(manifest: DatasetManifest, problem, neg_ratio: float, seed: int,
                 split: str = None) -> List[ExamplePair]:
    """采样正负样本对：全部正样本 + round(neg_ratio * 正样本数) 个负样本"""
    problem = Problem.parse(problem)
    if neg_ratio <= 0:
        raise ParameterError(f"neg_ratio 必须为正，实际为 {neg_ratio}")

    positives, negatives = [], []
    for scene_id in manifest.scene_ids(split):
        scene = manifest.scene_entry(scene_id)
        if problem == Problem.THIRD_THIRD:
            pos, neg = _third_third_candidates(scene)
        else:
            pos, neg = _third_first_candidates(scene)
        positives.extend(pos)
        negatives.extend(neg)

    if not positives:
        raise EmptyDatasetError(f"数据集中没有 {problem.value} 正样本对")

    num_negatives = int(math.floor(neg_ratio * len(positives) + 0.5))
    rng = np.random.default_rng(seed)
    if not negatives:
        print(f" 警告: 没有可用的负样本，只返回 {len(positives)} 个正样本")
        chosen = []
    elif len(negatives) >= num_negatives:
        indices = np.sort(rng.choice(len(negatives), size=num_negatives, replace=False))
        chosen = [negatives[int(i)] for i in indices]
    else:
        # 候选负样本不足时先全部取用，其余有放回补齐
        extra = rng.choice(len(negatives), size=num_negatives - len(negatives), replace=True)
        chosen = list(negatives) + [negatives[int(i)] for i in extra]

    return positives + chosen
