"""
結果輸出
指標摘要、符合性報告、透明度報告與時間序列的檔案輸出
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from bandwidth_model import link_name
from conformance_engine import ConformanceReport
from metrics_engine import ClassMetrics, MetricsSlice, MetricsSummary
from transparency import TransparencyReport

logger = logging.getLogger(__name__)

NOT_AVAILABLE = "N.A."
FORMATS = ("csv", "json")


def format_value(value: Optional[float]) -> str:
    """固定兩位小數；None 表示不適用"""
    return NOT_AVAILABLE if value is None else f"{value:.2f}"


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), 2)


def slice_rows(metrics: MetricsSlice) -> Dict[str, str]:
    """依使用率、平均、阻擋率、平均的順序排列的一欄數值"""
    rows: Dict[str, str] = {}
    for m in metrics.per_class:
        rows[f"Utilization TC{m.class_id}"] = format_value(m.utilization)
    rows["Mean utilization"] = format_value(metrics.mean_utilization)
    for m in metrics.per_class:
        rows[f"Block rate TC{m.class_id}"] = format_value(m.block_rate)
    rows["Mean block rate"] = format_value(metrics.mean_block_rate)
    return rows


def summary_table(summary: MetricsSummary) -> pd.DataFrame:
    """
    摘要表：每列一個指標，欄位為各階段與整體

    Returns:
        以指標名稱為索引的字串 DataFrame
    """
    columns = {f"Phase {i}": slice_rows(s) for i, s in enumerate(summary.phases, 1)}
    columns["Overall"] = slice_rows(summary.overall)
    frame = pd.DataFrame(columns)
    frame.index.name = "metric"
    return frame


def comparison_table(summaries: Mapping[str, MetricsSummary]) -> pd.DataFrame:
    """多個執行（例如不同模型）的整體指標並列"""
    frame = pd.DataFrame({label: slice_rows(s.overall) for label, s in summaries.items()})
    frame.index.name = "metric"
    return frame


def _class_record(m: ClassMetrics) -> Dict:
    return {
        "class": m.class_id,
        "arrivals": m.arrivals,
        "accepted": m.accepted,
        "blocked": m.blocked,
        "utilization": _round(m.utilization),
        "block_rate": _round(m.block_rate),
        "preemption_pct": _round(m.preemption_pct),
        "devolution_pct": _round(m.devolution_pct),
        "preemptions_per_hour": _round(m.preemptions_per_hour),
        "devolutions_per_hour": _round(m.devolutions_per_hour),
    }


def _slice_record(s: MetricsSlice) -> Dict:
    return {
        "start_s": s.start_ms / 1000,
        "end_s": s.end_ms / 1000,
        "per_class": [_class_record(m) for m in s.per_class],
        "mean_utilization": _round(s.mean_utilization),
        "mean_block_rate": _round(s.mean_block_rate),
        "link": _class_record(s.aggregate),
    }


def summary_record(summary: MetricsSummary, report: Optional[ConformanceReport] = None) -> Dict:
    record = {
        "link": link_name(summary.link),
        "model": summary.model,
        "seeds": list(summary.seeds),
        "overall": _slice_record(summary.overall),
        "phases": [_slice_record(s) for s in summary.phases],
    }
    if report is not None:
        record["conformance"] = report.to_dict()
    return record


def _dump_json(data, path: Path) -> Path:
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def _dump_frame(frame: pd.DataFrame, path: Path, **kwargs) -> Path:
    path.write_text(frame.to_csv(lineterminator="\n", **kwargs), encoding="utf-8")
    return path


def _check_formats(formats: Iterable[str]) -> List[str]:
    formats = list(dict.fromkeys(formats))
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise ValueError(f"不支援的輸出格式: {', '.join(unknown)}（可用: {', '.join(FORMATS)}）")
    return formats


def export_results(summary: MetricsSummary, report: Optional[ConformanceReport], out_dir,
                   formats: Sequence[str] = FORMATS, prefix: str = "",
                   transparency: Optional[TransparencyReport] = None) -> List[Path]:
    """
    輸出一次執行的結果

    相同輸入必定產生相同位元組的檔案。

    Args:
        summary: 指標摘要
        report: 符合性報告（可為 None）
        out_dir: 輸出目錄
        formats: csv（表格）與 / 或 json（結構化紀錄）
        prefix: 檔名前綴，例如 "atcs-"
        transparency: 一併輸出的透明度報告

    Returns:
        寫出的檔案清單
    """
    formats = _check_formats(formats)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(_dump_frame(summary_table(summary), out_dir / f"{prefix}summary.csv"))
    if "json" in formats:
        written.append(_dump_json(summary_record(summary, report), out_dir / f"{prefix}summary.json"))
    if report is not None:
        written.append(_dump_json(report.to_dict(), out_dir / f"{prefix}conformance.json"))
    if transparency is not None:
        written.extend(export_transparency(transparency, out_dir))
    logger.info("已輸出 %d 個結果檔至 %s", len(written), out_dir)
    return written


def export_comparison(summaries: Mapping[str, MetricsSummary], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _dump_frame(comparison_table(summaries), path)


def export_series(frame: pd.DataFrame, path) -> Path:
    """時間序列以固定兩位小數輸出"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _dump_frame(frame, path, index=False, float_format="%.2f")


def export_transparency(report: TransparencyReport, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = out_dir / "transparency.txt"
    text.write_text(report.to_text(), encoding="utf-8")
    structured = out_dir / "transparency.json"
    structured.write_text(report.to_json(), encoding="utf-8")
    return [text, structured]
