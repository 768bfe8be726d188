"""
桌面规模基准数据集：默认 9 个场景（6 训练 / 3 测试）
"""

from typing import Dict, List, Tuple

from tqdm import tqdm

from core.errors import ParameterError
from synthdata.scene_generator import SceneSpec, generate_scene


def scene_seed(seed: int, index: int) -> int:
    """每个场景的派生种子"""
    return seed * 1000 + index


def build_benchmark(seed: int, scene_config: Dict, num_scenes: int,
                    num_train: int) -> Tuple[List[SceneSpec], Dict[str, str]]:
    """生成全部场景并给出 训练/测试 划分"""
    if num_scenes < 1:
        raise ParameterError(f"场景数必须 >= 1，实际为 {num_scenes}")
    if not 0 <= num_train <= num_scenes:
        raise ParameterError(f"训练场景数 {num_train} 必须位于 [0, {num_scenes}]")

    scenes = []
    for i in tqdm(range(num_scenes), desc="生成场景", unit="scene"):
        spec = SceneSpec.from_config(f'scene_{i:03d}', scene_seed(seed, i), scene_config)
        scenes.append(generate_scene(spec))

    splits = {scene.scene_id: ('train' if i < num_train else 'test') for i, scene in enumerate(scenes)}
    return scenes, splits
