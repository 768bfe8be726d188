import os
from datetime import datetime
from typing import Dict, List, Optional, Sequence as Seq

from jinja2 import Template

from processors.metrics import EvalReport
from outputs.plot_writer import report_label


class WebReportGenerator:
    """评估结果网页摘要生成器"""

    def __init__(self):
        self.template = self._load_report_template()

    def _load_report_template(self) -> Template:
        """加载报告模板"""
        template_str = """
<!DOCTYPE html>
<html lang="zh-CN">
<head>
    <meta charset="UTF-8">
    <title>分割与跨视角匹配评估 - {{ date }}</title>
    <style>
        body { font-family: 'Helvetica Neue', Arial, sans-serif; background: #eef1f5; color: #222; margin: 0; }
        main { width: 92%; max-width: 1100px; margin: 24px auto; }
        h1 { font-size: 1.6em; border-bottom: 3px solid #1f6feb; padding-bottom: 8px; }
        h2 { font-size: 1.2em; margin: 28px 0 10px; }
        table { width: 100%; border-collapse: collapse; background: #fff; }
        th, td { border: 1px solid #d0d7de; padding: 6px 10px; text-align: right; }
        th { background: #f6f8fa; }
        td.label, th.label { text-align: left; }
        td.best { font-weight: bold; color: #1a7f37; }
        .meta { color: #57606a; font-size: 0.85em; }
        .curves { display: flex; flex-wrap: wrap; gap: 12px; }
        .curves img { width: 48%; background: #fff; border: 1px solid #d0d7de; }
    </style>
</head>
<body>
<main>
    <h1>人物分割与跨视角匹配评估</h1>
    <p class="meta">{{ reports|length }} 份报告 · 生成于 {{ generation_time }}</p>

    <h2>指标对比（百分比）</h2>
    <table>
        <tr>
            <th class="label">方法</th><th>平均 IoU</th><th>mAP</th><th>ACC</th>
            <th>序列</th><th>查询</th><th>跳过 AP</th><th>排除 ACC</th>
        </tr>
        {% for row in reports %}
        <tr>
            <td class="label">{{ row.label }}</td>
            <td{% if row.mean_iou == best_iou %} class="best"{% endif %}>{{ row.mean_iou }}</td>
            <td>{{ row.mean_ap }}</td>
            <td>{{ row.acc }}</td>
            <td>{{ row.num_sequences }}</td>
            <td>{{ row.num_queries }}</td>
            <td>{{ row.skipped_ap_queries }}</td>
            <td>{{ row.excluded_acc_queries }}</td>
        </tr>
        {% endfor %}
    </table>

    {% if figures %}
    <h2>曲线</h2>
    <div class="curves">
        {% for figure in figures %}<img src="{{ figure }}" alt="{{ figure }}">{% endfor %}
    </div>
    {% endif %}
</main>
</body>
</html>
        """
        return Template(template_str)

    def generate_report(self, reports: Seq[EvalReport], out_dir: str, figures: Optional[List[str]] = None) -> str:
        """生成网页摘要，返回文件路径；失败时返回空字符串"""
        try:
            rows = [self._summarize(report) for report in reports]
            template_data = {
                'date': datetime.now().strftime('%Y-%m-%d'),
                'reports': rows,
                # 最高平均 IoU 加粗
                'best_iou': self._format(max(report.mean_iou for report in reports)) if reports else None,
                'figures': [os.path.relpath(f, out_dir) for f in (figures or []) if f.endswith('.svg')],
                'generation_time': datetime.now().strftime('%Y-%m-%d %H:%M:%S'),
            }

            html_content = self.template.render(**template_data)

            os.makedirs(out_dir, exist_ok=True)
            filepath = os.path.join(out_dir, 'index.html')
            with open(filepath, 'w', encoding='utf-8') as f:
                f.write(html_content)

            print(f" 网页摘要已生成: {filepath}")
            return filepath

        except Exception as e:
            print(f" 生成网页摘要失败: {e}")
            return ""

    def _summarize(self, report: EvalReport) -> Dict:
        """格式化单份报告的指标"""
        return {
            'label': report_label(report),
            'mean_iou': self._format(report.mean_iou),
            'mean_ap': self._format(report.mean_ap),
            'acc': self._format(report.acc),
            'num_sequences': len(report.per_sequence_iou),
            'num_queries': report.num_queries,
            'skipped_ap_queries': report.skipped_ap_queries,
            'excluded_acc_queries': report.excluded_acc_queries,
        }

    def _format(self, value: Optional[float]) -> str:
        if value is None:
            return '-'
        return f"{value * 100:.1f}"


# 全局实例
web_report_generator = WebReportGenerator()


def get_web_report_generator() -> WebReportGenerator:
    """获取网页摘要生成器实例"""
    return web_report_generator
