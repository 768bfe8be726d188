import copy
import json
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from core.errors import ConfigError

load_dotenv()

# 桌面规模预设：64x64 输入，缩减骨干网络，保证 CPU 上分钟级训练
DESK_PRESET: Dict[str, Dict[str, Any]] = {
    'scene': {
        'world_size': 128,
        'viewport': 64,
        'num_agents': 3,
        'num_first_person': 2,
        'num_third_person': 1,
        'num_frames': 20,
        'agent_size_min': 14,
        'agent_size_max': 22,
        'max_speed': 2,
        'segment_length_min': 3,
        'segment_length_max': 8,
        'ego_jitter': True,
    },
    'benchmark': {
        'num_scenes': 9,
        'num_train': 6,
    },
    'segnet': {
        'width': 64,
        'height': 64,
        'flow_stack': 5,
        'stage_widths': [16, 32, 64, 64, 64],
        'head_channels': 64,
        'streams': ['visual', 'motion'],
    },
    'match': {
        'problem': 'third_third',
        'reweight_mode': 'soft_attention',
        'embed_channels': 128,
        'margin': 1.0,
        'head_depth': 2,
        'aggregation': 'mean',
    },
    'train': {
        'lr_fcn': 1e-4,
        'lr_joint': 1e-5,
        'momentum': 0.9,
        'weight_decay': 5e-4,
        'batch_size': 8,
        'fcn_epochs': 30,
        'frozen_epochs': 20,
        'joint_epochs': 40,
        'loss_weight': 0.1,
        'neg_ratio': 3.0,
        'premask_switch': 0.5,
        'seed': 0,
    },
    'eval': {
        'threshold': 0.5,
        'window_length': 20,
        'interpolated_ap': False,
    },
}

# VGG16 宽度预设：完整骨干宽度与 batch size 25
VGG_OVERRIDES: Dict[str, Dict[str, Any]] = {
    'segnet': {
        'stage_widths': [64, 128, 256, 512, 512],
        'head_channels': 512,
    },
    'train': {
        'batch_size': 25,
    },
}


class Config:
    """配置管理类"""

    def __init__(self):
        # 运行环境配置
        self.threads_raw = os.getenv('COVIEW_THREADS', '0') or '0'
        self.output_dir = os.getenv('COVIEW_OUTPUT_DIR', 'results')
        self.preset = os.getenv('COVIEW_PRESET', 'desk')
        self.enable_debug_mode = os.getenv('COVIEW_DEBUG', 'False').lower() == 'true'

    @property
    def threads(self) -> int:
        """torch 线程数上限，0 表示不限制"""
        try:
            return int(self.threads_raw)
        except ValueError:
            raise ConfigError(f"COVIEW_THREADS 必须是整数: {self.threads_raw!r}")

    def get_preset(self, name: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
        """获取预设配置（深拷贝）"""
        name = name or self.preset
        preset = copy.deepcopy(DESK_PRESET)
        if name == 'desk':
            return preset
        if name == 'vgg':
            for section, values in VGG_OVERRIDES.items():
                preset[section].update(values)
            return preset
        raise ConfigError(f"未知的预设: {name}（可选 desk / vgg）")

    def load_run_config(self, path: Optional[str] = None, overrides: Optional[Dict] = None,
                        preset: Optional[str] = None) -> Dict[str, Dict[str, Any]]:
        """合并配置：预设 <- 配置文件 <- 命令行参数"""
        merged = self.get_preset(preset)

        if path:
            if not os.path.exists(path):
                raise ConfigError(f"配置文件不存在: {path}")
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    file_values = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"配置文件格式错误 {path}: {e}")
            self._merge_into(merged, file_values, source=path)

        if overrides:
            # 命令行中未给出的参数为 None，不覆盖
            cleaned = {
                section: {k: v for k, v in values.items() if v is not None}
                for section, values in overrides.items()
            }
            self._merge_into(merged, cleaned, source='命令行')

        return merged

    def _merge_into(self, target: Dict, values: Dict, source: str):
        """按节合并，拒绝未知的节和键"""
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: 顶层必须是 JSON 对象")
        for section, section_values in values.items():
            if section not in target:
                raise ConfigError(f"{source}: 未知的配置节 '{section}'")
            if not isinstance(section_values, dict):
                raise ConfigError(f"{source}: 配置节 '{section}' 必须是 JSON 对象")
            for key, value in section_values.items():
                if key not in target[section]:
                    raise ConfigError(f"{source}: 配置节 '{section}' 中未知的键 '{key}'")
                target[section][key] = value

    def validate_config(self) -> bool:
        """验证环境配置是否有效"""
        problems = []
        try:
            if self.threads < 0:
                problems.append(f"COVIEW_THREADS 不能为负: {self.threads}")
        except ConfigError as e:
            problems.append(str(e))
        if self.preset not in ('desk', 'vgg'):
            problems.append(f"COVIEW_PRESET 只能为 desk 或 vgg: {self.preset}")

        if problems:
            print("错误: 环境配置无效")
            for problem in problems:
                print(f"  - {problem}")
            print("请检查 .env 文件或环境变量")
            return False
        return True

    def save_run_json(self, out_dir: str, run_record: Dict) -> str:
        """写出 run.json，记录完整的已解析配置与随机种子"""
        os.makedirs(out_dir, exist_ok=True)
        filepath = os.path.join(out_dir, 'run.json')
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(run_record, f, ensure_ascii=False, indent=2, default=str)
        return filepath


# 全局配置实例
config = Config()


def get_config() -> Config:
    """获取配置实例的便捷函数"""
    return config
