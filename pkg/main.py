#!/usr/bin/env python3
"""
多视角人物分割与身份匹配主程序
    gen    生成合成数据集
    train  两阶段训练（--stage fcn | joint）
    eval   传播 + 匹配 + 指标
    plot   曲线、叠加图与网页摘要
退出码：0 成功，2 配置/用法错误，3 数据完整性错误，1 其他失败
"""

import argparse
import os
import sys
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import torch
from PIL import Image

from config import config
from core.errors import ConfigError, CoViewError, EmptyDatasetError, IntegrityError
from core.types import Mask, Problem
from dataset_store import export_dataset, import_dataset, load_manifest
from networks.checkpoint import MATCH_PREFIX, SEG_PREFIX, load_checkpoint, load_into, save_checkpoint
from networks.matchnet import MatchConfig, build_match_head
from networks.segnet import SegNetConfig, build_network
from outputs.plot_writer import write_overlays, write_plots
from outputs.web_report import web_report_generator
from processors.evaluator import evaluate_dataset
from processors.metrics import EvalReport
from synthdata.benchmark import build_benchmark
from synthdata.pair_sampler import sample_pairs
from training.trainer import TrainConfig, train_fcn_stage, train_joint_stage


class CoViewRunner:
    """命令调度器"""

    def __init__(self):
        self.config = config

    def _resolve(self, args: argparse.Namespace, overrides: Optional[Dict] = None) -> Dict:
        return self.config.load_run_config(args.config, overrides, args.preset)

    def _save_run(self, out_dir: str, args: argparse.Namespace, resolved: Dict, extra: Optional[Dict] = None):
        record = {
            'command': args.command,
            'argv': args.argv,
            'preset': args.preset or self.config.preset,
            'config': resolved,
            'created_at': datetime.now().isoformat(),
        }
        record.update(extra or {})
        path = self.config.save_run_json(out_dir, record)
        print(f" 运行记录已写入: {path}")

    def run_gen(self, args: argparse.Namespace) -> int:
        """生成合成数据集"""
        print(" 开始生成合成数据集...")
        resolved = self._resolve(args, {
            'benchmark': {'num_scenes': args.num_scenes, 'num_train': args.num_train},
            'scene': {'num_frames': args.num_frames},
        })
        bench = resolved['benchmark']
        scenes, splits = build_benchmark(args.seed, resolved['scene'], bench['num_scenes'], bench['num_train'])
        manifest = export_dataset(scenes, args.out, splits)
        print(f" 已导出 {len(manifest.scenes)} 个场景到 {args.out}"
              f"（训练 {len(manifest.scene_ids('train'))} / 测试 {len(manifest.scene_ids('test'))}）")
        self._save_run(args.out, args, resolved, {'seed': args.seed})
        return 0

    def _seg_config(self, resolved: Dict, streams: Optional[str]) -> SegNetConfig:
        section = dict(resolved['segnet'])
        if streams:
            section['streams'] = [s.strip() for s in streams.split(',') if s.strip()]
        seg_config = SegNetConfig.from_dict(section)
        seg_config.validate()
        return seg_config

    def run_train(self, args: argparse.Namespace) -> int:
        """训练"""
        problem = Problem.parse(args.problem)
        if args.stage == 'joint' and (not args.ckpt or not os.path.exists(args.ckpt)):
            raise ConfigError("联合训练需要阶段(a)的检查点：请用 --ckpt 指定 train --stage fcn 的输出")
        resolved = self._resolve(args, {
            'train': {
                'seed': args.seed,
                'batch_size': args.batch_size,
                'fcn_epochs': args.fcn_epochs,
                'frozen_epochs': args.frozen_epochs,
                'joint_epochs': args.joint_epochs,
                'neg_ratio': args.neg_ratio,
            },
            'match': {'problem': problem.value, 'reweight_mode': args.reweight},
        })
        train_section = resolved['train']
        seed = train_section['seed']
        train_config = TrainConfig.from_section(train_section, args.stage, problem, resolved['eval']['threshold'])

        dataset = import_dataset(args.data, split='train')
        if not dataset:
            raise EmptyDatasetError(f"数据集 {args.data} 中没有训练场景")
        os.makedirs(args.out, exist_ok=True)

        if args.stage == 'fcn':
            seg_config = self._seg_config(resolved, args.streams)
            net = build_network(seg_config, init_seed=seed)
            if args.init_weights:
                load_into(net, load_checkpoint(args.init_weights), SEG_PREFIX)
                print(f" 已载入初始权重: {args.init_weights}")
            net, history = train_fcn_stage(net, dataset, train_config, args.out)
            final = save_checkpoint(os.path.join(args.out, 'fcn_final.cvck'), net, None, {
                'segnet': seg_config.to_dict(), 'train': train_config.to_dict(), 'stage': 'fcn',
                'epoch': train_config.fcn_epochs,
            })
        else:
            checkpoint = load_checkpoint(args.ckpt)
            if 'segnet' not in checkpoint.config or not checkpoint.has_namespace(SEG_PREFIX):
                raise ConfigError(f"检查点 {args.ckpt} 中没有分割网络参数")
            seg_config = SegNetConfig.from_dict(checkpoint.config['segnet'])
            net = build_network(seg_config, init_seed=seed)
            load_into(net, checkpoint, SEG_PREFIX)

            match_config = MatchConfig.from_dict(resolved['match'])
            match_head = build_match_head(seg_config, match_config, init_seed=seed)
            pairs = sample_pairs(load_manifest(args.data), problem, train_section['neg_ratio'], seed, split='train')
            positives = sum(pair.label for pair in pairs)
            print(f" 样本对: 正 {positives} / 负 {len(pairs) - positives}")
            net, match_head, history = train_joint_stage(net, match_head, pairs, dataset, train_config, args.out)
            final = save_checkpoint(os.path.join(args.out, 'joint_final.cvck'), net, match_head, {
                'segnet': seg_config.to_dict(), 'match': match_config.to_dict(), 'train': train_config.to_dict(),
                'stage': 'joint', 'epoch': train_config.frozen_epochs + train_config.joint_epochs,
            })

        print(f" 最终检查点: {final}")
        self._save_run(args.out, args, resolved, {'seed': seed, 'losses': history.losses})
        return 0

    def run_eval(self, args: argparse.Namespace) -> int:
        """评估"""
        problem = Problem.parse(args.problem)
        resolved = self._resolve(args, {
            'eval': {'window_length': args.window_length},
            'match': {'aggregation': args.aggregation},
        })
        eval_section = resolved['eval']
        interpolated = args.interpolated_ap or eval_section['interpolated_ap']

        net = match_head = None
        if args.baseline is None:
            if not args.ckpt:
                raise ConfigError("评估模型需要 --ckpt，或使用 --baseline copy-first")
            checkpoint = load_checkpoint(args.ckpt)
            if 'segnet' not in checkpoint.config:
                raise IntegrityError(f"检查点 {args.ckpt} 缺少分割网络配置")
            seg_config = SegNetConfig.from_dict(checkpoint.config['segnet'])
            net = build_network(seg_config)
            load_into(net, checkpoint, SEG_PREFIX)
            if checkpoint.has_namespace(MATCH_PREFIX):
                match_config = MatchConfig.from_dict(checkpoint.config['match'])
                if match_config.problem != problem:
                    raise ConfigError(f"检查点的匹配分支为 {match_config.problem.value}，与 --problem {problem.value} 不一致")
                match_config.aggregation = resolved['match']['aggregation']
                match_head = build_match_head(seg_config, match_config)
                load_into(match_head, checkpoint, MATCH_PREFIX)
            else:
                print(" 检查点中没有匹配分支，只评估分割")

        dataset = import_dataset(args.data, split=args.split)
        if not dataset:
            raise EmptyDatasetError(f"数据集 {args.data} 中没有 {args.split} 场景")

        report_dir = os.path.dirname(os.path.abspath(args.report))
        predictions_dir = args.predictions or os.path.join(report_dir, 'predictions')
        print(f" 开始评估 {len(dataset)} 个场景...")
        report, _ = evaluate_dataset(
            dataset, problem, net=net, match_head=match_head, baseline=args.baseline,
            threshold=eval_section['threshold'], window_length=eval_section['window_length'],
            aggregation=resolved['match']['aggregation'], interpolated_ap=interpolated,
            predictions_dir=predictions_dir,
            model_id=os.path.basename(args.ckpt) if args.ckpt else '',
            dataset_id=os.path.basename(os.path.normpath(args.data)),
        )
        report.data_root = os.path.abspath(args.data)
        report.split = args.split
        report.predictions_dir = os.path.abspath(predictions_dir)
        os.makedirs(report_dir, exist_ok=True)
        report.save(args.report)

        print(f" 平均 IoU: {report.mean_iou:.4f}")
        if report.mean_ap is not None:
            print(f" mAP: {report.mean_ap:.4f}（跳过 {report.skipped_ap_queries} 个查询）")
        if report.acc is not None:
            print(f" ACC: {report.acc:.4f}（排除 {report.excluded_acc_queries} 个查询）")
        print(f" 评估报告已写入: {args.report}")
        self._save_run(report_dir, args, resolved, {'report': os.path.abspath(args.report)})
        return 0

    def _write_report_overlays(self, report: EvalReport, out_dir: str) -> int:
        """根据预测目录中的掩码写出叠加图"""
        if not report.predictions_dir or not report.data_root or not os.path.isdir(report.predictions_dir):
            print(" 报告中没有预测目录，跳过叠加图")
            return 0
        dataset = import_dataset(report.data_root, split=report.split or None)
        count = 0
        for key in sorted(report.per_sequence_iou):
            scene_id, view_id, person = key.split('/')
            start = int(person.split('@')[1])
            mask_dir = os.path.join(report.predictions_dir, scene_id, view_id, person.replace('@', '_w'))
            if not os.path.isdir(mask_dir):
                continue
            names = sorted(name for name in os.listdir(mask_dir) if name.startswith('mask_'))
            masks = [Mask((np.asarray(Image.open(os.path.join(mask_dir, name))) > 0).astype(np.uint8))
                     for name in names]
            seq = dataset[scene_id][view_id]
            frames = seq.frames[start:start + len(masks)]
            write_overlays(frames, masks, os.path.join(out_dir, 'overlays', scene_id, view_id),
                           prefix=person.replace('@', '_w'))
            count += 1
        return count

    def run_plot(self, args: argparse.Namespace) -> int:
        """输出曲线、叠加图与网页摘要"""
        reports = [EvalReport.load(path) for path in args.report]
        written = write_plots(reports, args.out)
        for path in written:
            print(f" 已写出: {path}")
        if not args.no_overlays:
            count = self._write_report_overlays(reports[0], args.out)
            print(f" 已写出 {count} 个序列的叠加图")
        web_report_generator.generate_report(reports, args.out, written)
        self._save_run(args.out, args, {}, {'reports': [os.path.abspath(p) for p in args.report]})
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='多视角人物分割与身份匹配')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def common(sub: argparse.ArgumentParser):
        sub.add_argument('--config', help='JSON 配置文件（覆盖预设）')
        sub.add_argument('--preset', choices=['desk', 'vgg'], help='预设（默认取 COVIEW_PRESET）')

    gen = subparsers.add_parser('gen', help='生成合成数据集')
    common(gen)
    gen.add_argument('--out', default=os.path.join(config.output_dir, 'dataset'), help='数据集输出目录')
    gen.add_argument('--seed', type=int, required=True, help='随机种子')
    gen.add_argument('--num-scenes', type=int, help='场景数')
    gen.add_argument('--num-train', type=int, help='训练场景数')
    gen.add_argument('--num-frames', type=int, help='每个场景的帧数')

    train = subparsers.add_parser('train', help='训练')
    common(train)
    train.add_argument('--stage', choices=['fcn', 'joint'], required=True, help='训练阶段')
    train.add_argument('--problem', default='third-third', help='third-third 或 third-first')
    train.add_argument('--data', required=True, help='数据集目录')
    train.add_argument('--out', default=os.path.join(config.output_dir, 'checkpoints'), help='检查点输出目录')
    train.add_argument('--ckpt', help='阶段(a)检查点（joint 阶段必需）')
    train.add_argument('--init-weights', help='阶段(a)开始前载入的外部权重（检查点格式）')
    train.add_argument('--seed', type=int, required=True, help='随机种子')
    train.add_argument('--streams', help='启用的流，如 visual,motion')
    train.add_argument('--reweight', choices=['none', 'soft_attention', 'bounding_box'], help='特征重加权方式')
    train.add_argument('--batch-size', type=int)
    train.add_argument('--fcn-epochs', type=int)
    train.add_argument('--frozen-epochs', type=int)
    train.add_argument('--joint-epochs', type=int)
    train.add_argument('--neg-ratio', type=float, help='负/正样本比例')

    evaluate = subparsers.add_parser('eval', help='评估')
    common(evaluate)
    evaluate.add_argument('--ckpt', help='检查点')
    evaluate.add_argument('--data', required=True, help='数据集目录')
    evaluate.add_argument('--problem', default='third-third', help='third-third 或 third-first')
    evaluate.add_argument('--report', default=os.path.join(config.output_dir, 'report.json'), help='评估报告路径')
    evaluate.add_argument('--split', default='test', help='评估的数据划分')
    evaluate.add_argument('--baseline', choices=['copy-first'], help='基线方法（不需要检查点）')
    evaluate.add_argument('--predictions', help='预测输出目录（默认为报告旁的 predictions/）')
    evaluate.add_argument('--window-length', type=int, help='评估窗口长度')
    evaluate.add_argument('--aggregation', choices=['mean', 'min'], help='窗口内嵌入的聚合方式')
    evaluate.add_argument('--interpolated-ap', action='store_true', help='使用插值 AP')

    plot = subparsers.add_parser('plot', help='输出曲线与叠加图')
    plot.add_argument('--report', nargs='+', required=True, help='一个或多个评估报告')
    plot.add_argument('--out', default=os.path.join(config.output_dir, 'plots'), help='输出目录')
    plot.add_argument('--no-overlays', action='store_true', help='不输出掩码叠加图')
    plot.set_defaults(config=None, preset=None)

    return parser


def dispatch(argv: List[str]) -> int:
    """解析命令行并执行，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 对未知命令/参数以 2 退出
        return e.code if isinstance(e.code, int) else 2
    args.argv = list(argv)

    if not config.validate_config():
        print("程序终止")
        return 2
    if config.threads > 0:
        torch.set_num_threads(config.threads)

    runner = CoViewRunner()
    handlers = {
        'gen': runner.run_gen,
        'train': runner.run_train,
        'eval': runner.run_eval,
        'plot': runner.run_plot,
    }
    try:
        return handlers[args.command](args)
    except CoViewError as e:
        print(f" {args.command} 失败: {e}")
        return e.exit_code
    except Exception as e:
        print(f" {args.command} 失败: {type(e).__name__}: {e}")
        return 1


def main():
    """主函数"""
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
