"""
数据集存储
磁盘格式：
    manifest.json                         清单（版本、场景、视角、身份表、佩戴者映射、相对路径）
    scenes/<scene>/scene.json             已解析的场景配置
    scenes/<scene>/<view>/frame_0000.png  8 位 RGB 帧
    scenes/<scene>/<view>/mask_0000.png   8 位灰度标签图，像素值 = 身份（0 为背景）
    scenes/<scene>/<view>/flow_0000.cvfl  光流：'CVFL' + u32 宽 + u32 高 + 高x宽x2 float32（小端）
"""

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
from PIL import Image
from tqdm import tqdm

from core.errors import IntegrityError
from core.types import CameraKind, FlowField, Frame, Mask, PersonInstance, Sequence
from synthdata.renderer import render_view
from synthdata.scene_generator import SceneSpec

SCHEMA_VERSION = 1
FLOW_MAGIC = b'CVFL'
FLOW_HEADER = struct.Struct('<4sII')
MANIFEST_NAME = 'manifest.json'


@dataclass
class DatasetManifest:
    """数据集清单"""

    schema_version: int
    scenes: List[Dict]
    identities: Dict[str, List[int]]
    wearer_map: Dict[str, Dict[str, int]]
    root: str = field(default='', compare=False)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.pop('root')
        return data

    @classmethod
    def from_dict(cls, data: Dict, root: str = '') -> 'DatasetManifest':
        return cls(
            schema_version=data['schema_version'],
            scenes=data['scenes'],
            identities={k: list(v) for k, v in data['identities'].items()},
            wearer_map={k: dict(v) for k, v in data['wearer_map'].items()},
            root=root,
        )

    def scene_ids(self, split: Optional[str] = None) -> List[str]:
        return [scene['scene_id'] for scene in self.scenes if split is None or scene['split'] == split]

    def scene_entry(self, scene_id: str) -> Dict:
        for scene in self.scenes:
            if scene['scene_id'] == scene_id:
                return scene
        raise IntegrityError(f"清单中没有场景 {scene_id}")

    def iter_files(self) -> Iterable[str]:
        for scene in self.scenes:
            yield scene['spec']
            for view in scene['views']:
                for entry in view['frames']:
                    yield entry['frame']
                    yield entry['mask']
                    if entry.get('flow'):
                        yield entry['flow']


def write_flow_file(filepath: str, flow: FlowField) -> str:
    """写出 CVFL 光流文件"""
    height, width = flow.height, flow.width
    payload = np.ascontiguousarray(flow.data, dtype='<f4')
    try:
        with open(filepath, 'wb') as f:
            f.write(FLOW_HEADER.pack(FLOW_MAGIC, width, height))
            f.write(payload.tobytes())
    except OSError as e:
        raise IntegrityError(f"写入光流文件失败 {filepath}: {e}")
    return filepath


def load_flow_file(filepath: str) -> FlowField:
    """读取 CVFL 光流文件（也可用于加载外部计算的光流）"""
    try:
        with open(filepath, 'rb') as f:
            header = f.read(FLOW_HEADER.size)
            body = f.read()
    except OSError as e:
        raise IntegrityError(f"读取光流文件失败 {filepath}: {e}")

    if len(header) != FLOW_HEADER.size:
        raise IntegrityError(f"光流文件头不完整: {filepath}")
    magic, width, height = FLOW_HEADER.unpack(header)
    if magic != FLOW_MAGIC:
        raise IntegrityError(f"光流文件魔数错误 {filepath}: {magic!r}")
    expected = width * height * 2 * 4
    if len(body) != expected:
        raise IntegrityError(f"光流文件长度错误 {filepath}: 期望 {expected} 字节，实际 {len(body)} 字节")
    data = np.frombuffer(body, dtype='<f4').reshape(height, width, 2).astype(np.float32)
    return FlowField(data)


def _save_png(filepath: str, array: np.ndarray):
    try:
        Image.fromarray(array).save(filepath, format='PNG')
    except OSError as e:
        raise IntegrityError(f"写入图像失败 {filepath}: {e}")


def _load_png(filepath: str) -> np.ndarray:
    try:
        with Image.open(filepath) as image:
            return np.asarray(image).copy()
    except OSError as e:
        raise IntegrityError(f"读取图像失败 {filepath}: {e}")


class DatasetStore:
    """数据集目录管理类"""

    def __init__(self, root: str):
        self.root = root
        self.scenes_dir = os.path.join(root, 'scenes')

    def ensure_directories(self):
        """确保输出目录存在"""
        try:
            os.makedirs(self.scenes_dir, exist_ok=True)
        except OSError as e:
            raise IntegrityError(f"无法创建数据集目录 {self.scenes_dir}: {e}")

    def abspath(self, relpath: str) -> str:
        return os.path.join(self.root, *relpath.split('/'))

    def export_scene(self, scene: SceneSpec, split: str) -> Dict:
        """写出单个场景的全部视角，返回清单中的场景条目"""
        scene_rel = f'scenes/{scene.scene_id}'
        os.makedirs(self.abspath(scene_rel), exist_ok=True)
        spec_rel = f'{scene_rel}/scene.json'
        with open(self.abspath(spec_rel), 'w', encoding='utf-8') as f:
            json.dump(scene.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)

        views = []
        for rig in scene.rigs:
            view_rel = f'{scene_rel}/{rig.view_id}'
            os.makedirs(self.abspath(view_rel), exist_ok=True)
            frames = []
            for t in range(scene.num_frames):
                frame, masks, flow = render_view(scene, rig.view_id, t)
                labels = np.zeros((frame.height, frame.width), dtype=np.uint8)
                for identity, mask in masks.items():
                    if identity > 255:
                        raise IntegrityError(f"身份编号 {identity} 超出 8 位标签图范围")
                    labels[mask.data == 1] = identity

                entry = {
                    'frame': f'{view_rel}/frame_{t:04d}.png',
                    'mask': f'{view_rel}/mask_{t:04d}.png',
                    'flow': f'{view_rel}/flow_{t:04d}.cvfl' if flow is not None else None,
                    'visible': sorted(masks.keys()),
                }
                _save_png(self.abspath(entry['frame']), frame.to_uint8())
                _save_png(self.abspath(entry['mask']), labels)
                if flow is not None:
                    write_flow_file(self.abspath(entry['flow']), flow)
                frames.append(entry)

            views.append({
                'view_id': rig.view_id,
                'camera_kind': rig.kind.value,
                'wearer_identity': rig.carried_identity if rig.kind == CameraKind.FIRST_PERSON else None,
                'width': rig.width,
                'height': rig.height,
                'frames': frames,
            })

        return {
            'scene_id': scene.scene_id,
            'seed': scene.seed,
            'split': split,
            'num_frames': scene.num_frames,
            'spec': spec_rel,
            'views': views,
        }

    def export_dataset(self, scenes: List[SceneSpec], splits: Optional[Dict[str, str]] = None) -> DatasetManifest:
        """写出数据集与清单"""
        self.ensure_directories()
        splits = splits or {}
        entries = []
        for scene in tqdm(scenes, desc=' 导出场景', leave=False):
            entries.append(self.export_scene(scene, splits.get(scene.scene_id, 'train')))

        manifest = DatasetManifest(
            schema_version=SCHEMA_VERSION,
            scenes=entries,
            identities={scene.scene_id: sorted(agent.identity for agent in scene.agents) for scene in scenes},
            wearer_map={scene.scene_id: scene.wearer_map for scene in scenes},
            root=self.root,
        )
        manifest_path = os.path.join(self.root, MANIFEST_NAME)
        try:
            with open(manifest_path, 'w', encoding='utf-8') as f:
                json.dump(manifest.to_dict(), f, ensure_ascii=False, indent=2)
        except OSError as e:
            raise IntegrityError(f"写入清单失败 {manifest_path}: {e}")
        return manifest

    def load_manifest(self) -> DatasetManifest:
        """读取清单并检查所有引用文件都存在"""
        manifest_path = os.path.join(self.root, MANIFEST_NAME)
        if not os.path.exists(manifest_path):
            raise IntegrityError(f"清单文件不存在: {manifest_path}")
        try:
            with open(manifest_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise IntegrityError(f"清单文件无法解析 {manifest_path}: {e}")

        if data.get('schema_version') != SCHEMA_VERSION:
            raise IntegrityError(f"不支持的清单版本: {data.get('schema_version')}")
        try:
            manifest = DatasetManifest.from_dict(data, root=self.root)
        except KeyError as e:
            raise IntegrityError(f"清单缺少字段 {e}: {manifest_path}")

        for relpath in manifest.iter_files():
            if not os.path.exists(self.abspath(relpath)):
                raise IntegrityError(f"清单引用的文件不存在: {relpath}")
        return manifest

    def load_view(self, manifest: DatasetManifest, scene_id: str, view_id: str) -> Sequence:
        """读取单个视角为 Sequence（掩码由标签图派生）"""
        scene = manifest.scene_entry(scene_id)
        view = next((v for v in scene['views'] if v['view_id'] == view_id), None)
        if view is None:
            raise IntegrityError(f"场景 {scene_id} 中没有视角 {view_id}")

        frames, flows, instances = [], [], []
        for t, entry in enumerate(view['frames']):
            rgb = _load_png(self.abspath(entry['frame']))
            if rgb.ndim != 3 or rgb.shape[2] != 3:
                raise IntegrityError(f"帧图像不是 RGB: {entry['frame']}")
            frames.append(Frame.from_uint8(rgb))

            labels = _load_png(self.abspath(entry['mask']))
            frame_instances = []
            for identity in sorted(int(i) for i in np.unique(labels) if i > 0):
                mask = Mask((labels == identity).astype(np.uint8))
                frame_instances.append(PersonInstance(scene_id, view_id, t, identity, mask))
            if sorted(inst.identity for inst in frame_instances) != sorted(entry['visible']):
                raise IntegrityError(f"标签图与清单中的可见身份不一致: {entry['mask']}")
            instances.append(tuple(frame_instances))

            if entry.get('flow'):
                flow = load_flow_file(self.abspath(entry['flow']))
                if (flow.height, flow.width) != (frames[-1].height, frames[-1].width):
                    raise IntegrityError(f"光流尺寸与帧尺寸不一致: {entry['flow']}")
                flows.append(flow)

        return Sequence(
            view_id=view_id,
            camera_kind=CameraKind(view['camera_kind']),
            frames=tuple(frames),
            flows=tuple(flows),
            instances=tuple(instances),
            wearer_identity=view['wearer_identity'],
            scene_id=scene_id,
        )

    def import_dataset(self, manifest: Optional[DatasetManifest] = None,
                       split: Optional[str] = None) -> Dict[str, Dict[str, Sequence]]:
        """读取数据集：{场景ID: {视角ID: Sequence}}"""
        manifest = manifest or self.load_manifest()
        dataset = {}
        for scene_id in manifest.scene_ids(split):
            scene = manifest.scene_entry(scene_id)
            dataset[scene_id] = {
                view['view_id']: self.load_view(manifest, scene_id, view['view_id'])
                for view in scene['views']
            }
        return dataset


def export_dataset(scenes: List[SceneSpec], root_path: str,
                   splits: Optional[Dict[str, str]] = None) -> DatasetManifest:
    """导出数据集的便捷函数"""
    return DatasetStore(root_path).export_dataset(scenes, splits)


def load_manifest(root_path: str) -> DatasetManifest:
    """读取清单的便捷函数"""
    return DatasetStore(root_path).load_manifest()


def import_dataset(root_path: str, split: Optional[str] = None) -> Dict[str, Dict[str, Sequence]]:
    """读取数据集的便捷函数"""
    return DatasetStore(root_path).import_dataset(split=split)
