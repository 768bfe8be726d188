"""
检查点容器
二进制格式（小端）：
    'CVCK' | u32 版本 | u32 配置长度 | 配置 JSON (UTF-8) | u32 条目数
    每个条目：u16 名称长度 | 名称 | u8 维数 | u32 x 维数 | float32 数据
分割网络参数以 'seg.' 为前缀，匹配分支参数以 'match.' 为前缀
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from core.errors import IntegrityError

CHECKPOINT_MAGIC = b'CVCK'
CHECKPOINT_VERSION = 1
SEG_PREFIX = 'seg.'
MATCH_PREFIX = 'match.'

_HEADER = struct.Struct('<4sII')
_U32 = struct.Struct('<I')
_U16 = struct.Struct('<H')
_U8 = struct.Struct('<B')


@dataclass
class Checkpoint:
    """读入内存的检查点"""

    config: Dict
    tensors: 'OrderedDict[str, np.ndarray]' = field(default_factory=OrderedDict)
    path: str = ''

    def namespace(self, prefix: str) -> 'OrderedDict[str, np.ndarray]':
        return OrderedDict((name[len(prefix):], array) for name, array in self.tensors.items()
                           if name.startswith(prefix))

    def has_namespace(self, prefix: str) -> bool:
        return any(name.startswith(prefix) for name in self.tensors)


def _collect(module: nn.Module, prefix: str) -> 'OrderedDict[str, np.ndarray]':
    entries = OrderedDict()
    for name, tensor in module.state_dict().items():
        entries[prefix + name] = tensor.detach().cpu().numpy().astype('<f4')
    return entries


def save_checkpoint(filepath: str, seg_net: nn.Module, match_head: Optional[nn.Module] = None,
                    config: Optional[Dict] = None) -> str:
    """写出检查点；config 至少应包含 segnet 配置"""
    entries = _collect(seg_net, SEG_PREFIX)
    if match_head is not None:
        entries.update(_collect(match_head, MATCH_PREFIX))

    config_bytes = json.dumps(config or {}, ensure_ascii=False, sort_keys=True).encode('utf-8')
    chunks = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(config_bytes)), config_bytes,
              _U32.pack(len(entries))]
    for name, array in entries.items():
        name_bytes = name.encode('utf-8')
        chunks.append(_U16.pack(len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(_U8.pack(array.ndim))
        chunks.extend(_U32.pack(dim) for dim in array.shape)
        chunks.append(np.ascontiguousarray(array).tobytes())

    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        with open(filepath, 'wb') as f:
            f.write(b''.join(chunks))
    except OSError as e:
        raise IntegrityError(f"写入检查点失败 {filepath}: {e}")
    return filepath


class _Reader:
    def __init__(self, data: bytes, filepath: str):
        self.data = data
        self.offset = 0
        self.filepath = filepath

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise IntegrityError(f"检查点文件被截断: {self.filepath}（偏移 {self.offset}）")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> Tuple:
        return fmt.unpack(self.take(fmt.size))


def load_checkpoint(filepath: str) -> Checkpoint:
    """读取检查点文件"""
    try:
        with open(filepath, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise IntegrityError(f"读取检查点失败 {filepath}: {e}")

    reader = _Reader(data, filepath)
    magic, version, config_len = reader.unpack(_HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise IntegrityError(f"检查点魔数错误 {filepath}: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"不支持的检查点版本 {version}: {filepath}")
    try:
        config = json.loads(reader.take(config_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"检查点配置损坏 {filepath}: {e}")

    (count,) = reader.unpack(_U32)
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack(_U16)
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack(_U8)
        shape = tuple(reader.unpack(_U32)[0] for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) * 4
        tensors[name] = np.frombuffer(reader.take(size), dtype='<f4').reshape(shape).astype(np.float32)

    if reader.offset != len(data):
        raise IntegrityError(f"检查点文件末尾有多余数据: {filepath}")
    return Checkpoint(config=config, tensors=tensors, path=filepath)


def load_into(module: nn.Module, checkpoint: Checkpoint, prefix: str):
    """把某个命名空间的参数载入模块；名称或形状不一致时报错"""
    stored = checkpoint.namespace(prefix)
    target = module.state_dict()

    missing = [name for name in target if name not in stored]
    unexpected = [name for name in stored if name not in target]
    if missing or unexpected:
        raise IntegrityError(
            f"检查点 {checkpoint.path} 的 '{prefix}' 参数名不匹配: 缺少 {missing[:5]}，多余 {unexpected[:5]}"
        )

    state = OrderedDict()
    for name, tensor in target.items():
        array = stored[name]
        if tuple(array.shape) != tuple(tensor.shape):
            raise IntegrityError(
                f"检查点 {checkpoint.path} 中 {prefix}{name} 形状为 {tuple(array.shape)}，模型要求 {tuple(tensor.shape)}"
            )
        # num_batches_tracked 等整型缓冲区按原 dtype 还原
        state[name] = torch.from_numpy(array.copy()).to(tensor.dtype)
    module.load_state_dict(state, strict=True)
