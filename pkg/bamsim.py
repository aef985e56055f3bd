#!/usr/bin/env python3
"""
頻寬分配模型模擬程式
執行 BAM 模擬、模型比較掃描、事件紀錄符合性檢查與透明度報告
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from bam_engine import create_engine
from bandwidth_model import BamModel, BandwidthBrokerError, ConfigError, parse_link_name
from conformance_engine import (
    ConformanceReport,
    RequirementVerdict,
    TraceMismatch,
    check_exceptionality,
    check_non_discrimination,
    proportionality_verdict,
)
from event_log import CorruptLog, EventKind, EventLog
from metrics_engine import MetricsSummary, UnknownLink, average_summaries, summarize, time_series
from result_database import ResultDatabase
from result_exporter import (
    FORMATS,
    export_comparison,
    export_results,
    export_series,
    export_transparency,
    format_value,
)
from scenario import InvalidScenario, Scenario
from scenario_loader import ScenarioParseError, ScenarioValidationError, parse_scenario
from simulator import Simulator
from transparency import build_report

logger = logging.getLogger("bamsim")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_RUN = 5
EXIT_CORRUPT = 6


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"無法解析整數清單: {text}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"無法解析數值清單: {text}")


def _model_list(text: str) -> List[BamModel]:
    try:
        return [BamModel.parse(item) for item in text.split(",") if item.strip()]
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e))


def _format_list(text: str) -> List[str]:
    formats = [item.strip() for item in text.split(",") if item.strip()]
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise argparse.ArgumentTypeError(f"不支援的輸出格式: {', '.join(unknown)}")
    return formats


def _link(text: str):
    try:
        return parse_link_name(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bamsim", description="頻寬分配模型 (BAM) 模擬與 ITM 符合性檢查")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="顯示除錯訊息")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="只顯示警告與錯誤")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_options(p, models_default=None):
        p.add_argument("--scenario", required=True, help="情境檔路徑或內建情境名稱 (scenario1, scenario2)")
        p.add_argument("--model", type=_model_list, default=models_default,
                       help="以逗號分隔的模型清單 (mam, rdm, atcs, frfs)")
        p.add_argument("--seeds", type=_int_list, help="以逗號分隔的種子（預設使用情境設定）")
        p.add_argument("--out", default="results", help="輸出目錄")
        p.add_argument("--link", type=_link, help="指標鏈路，例如 0-1（預設為情境的觀察鏈路）")
        p.add_argument("--jobs", type=int, default=1, help="平行執行的行程數")
        p.add_argument("--strict", action="store_true", help="任一要求判定失敗時以非零狀態結束")
        p.add_argument("--no-check", action="store_true", help="不在每個事件後檢查帳本條件")

    run = sub.add_parser("run", help="執行模擬並輸出事件、指標與符合性報告")
    scenario_options(run)
    run.add_argument("--format", type=_format_list, default=list(FORMATS), help="csv、json 或 csv,json")
    run.add_argument("--bucket-seconds", type=float, help="時間序列區間長度（秒）")
    run.add_argument("--decision-points", type=int, default=1000, help="非歧視檢查的決策點數量")
    run.add_argument("--transparency-only", action="store_true", help="只輸出透明度報告，不執行模擬")

    sweep = sub.add_parser("sweep", help="在相同請求序列上比較多個模型與負載倍數")
    scenario_options(sweep, models_default=list(BamModel))
    sweep.add_argument("--load-multipliers", type=_float_list, default=[1.0], help="以逗號分隔的負載倍數")

    check = sub.add_parser("check", help="重播既有事件紀錄並檢查例外性")
    check.add_argument("--scenario", required=True, help="產生紀錄時的情境檔")
    source = check.add_mutually_exclusive_group(required=True)
    source.add_argument("--events", help="事件檔路徑")
    source.add_argument("--db", help="結果資料庫路徑（需搭配 --run-id）")
    check.add_argument("--run-id", type=int, help="資料庫中的執行編號")
    check.add_argument("--frfs-events", help="同一請求序列的 FRFS 事件檔，用於比例性比較")
    check.add_argument("--link", type=_link, help="指標鏈路")
    check.add_argument("--strict", action="store_true", help="判定失敗時以非零狀態結束")

    transparency = sub.add_parser("transparency", help="輸出透明度報告")
    transparency.add_argument("--scenario", required=True, help="情境檔路徑或內建情境名稱")
    transparency.add_argument("--link", type=_link, help="公開類別表的鏈路")
    transparency.add_argument("--out", help="輸出目錄（預設只印出）")
    transparency.add_argument("--json", action="store_true", help="印出 JSON 而非文字")
    return parser


def _simulate(job: Tuple[Scenario, int, bool]) -> Tuple[EventLog, MetricsSummary]:
    scenario, seed, check = job
    log = Simulator(scenario, seed, check).run()
    return log, summarize(log, scenario)


def simulate_all(jobs: Sequence[Tuple[Scenario, int, bool]], workers: int = 1) -> List[Tuple[EventLog, MetricsSummary]]:
    """依序（或以多個行程）執行模擬；結果順序與輸入相同"""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(_simulate, jobs))
    return [_simulate(job) for job in jobs]


def _resummarize(results, scenario: Scenario, link) -> List[MetricsSummary]:
    if link is None:
        return [summary for _, summary in results]
    return [summarize(log, scenario, link) for log, _ in results]


def merge_verdicts(verdicts: Sequence[RequirementVerdict]) -> RequirementVerdict:
    """多個種子的同一要求合併：全部通過才通過，數值統計相加"""
    statistics: Dict[str, object] = {"seeds": len(verdicts)}
    for verdict in verdicts:
        for key, value in verdict.statistics.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                statistics[key] = statistics.get(key, 0) + value
    counterexamples = tuple(c for v in verdicts for c in v.counterexamples)[:20]
    return RequirementVerdict(verdicts[0].requirement, all(v.passed for v in verdicts), statistics, counterexamples)


def _check_pairing(logs: Sequence[EventLog], baseline: Sequence[EventLog]):
    for log, reference in zip(logs, baseline):
        if log.arrival_trace() != reference.arrival_trace():
            raise TraceMismatch(f"種子 {log.header.get('seed')} 的請求序列與 FRFS 不同")


def _print_table(summaries: Dict[str, MetricsSummary]):
    labels = list(summaries)
    print(f"{'指標':<22}" + "".join(f"{label:>12}" for label in labels))
    print("-" * (22 + 12 * len(labels)))
    first = summaries[labels[0]].overall
    for m in first.per_class:
        print(f"{'Utilization TC' + str(m.class_id):<22}" + "".join(
            f"{format_value(summaries[label].overall.for_class(m.class_id).utilization):>12}" for label in labels))
    print(f"{'Mean utilization':<22}" + "".join(
        f"{format_value(summaries[label].overall.mean_utilization):>12}" for label in labels))
    for m in first.per_class:
        print(f"{'Block rate TC' + str(m.class_id):<22}" + "".join(
            f"{format_value(summaries[label].overall.for_class(m.class_id).block_rate):>12}" for label in labels))
    print(f"{'Mean block rate':<22}" + "".join(
        f"{format_value(summaries[label].overall.mean_block_rate):>12}" for label in labels))


def _print_report(label: str, report: ConformanceReport):
    for verdict in report.verdicts.values():
        mark = "✓" if verdict.passed else "✗"
        print(f"  {mark} {label} 要求 {verdict.requirement}: {verdict.verdict}")
        for counterexample in verdict.counterexamples[:3]:
            print(f"      {counterexample}")


def command_transparency(args) -> int:
    scenario = parse_scenario(args.scenario)
    report = build_report(scenario, args.link)
    print(report.to_json() if args.json else report.to_text(), end="")
    if args.out:
        export_transparency(report, args.out)
    return EXIT_OK


def command_run(args) -> int:
    print("=" * 60)
    print("BAM 模擬")
    print("=" * 60)
    scenario = parse_scenario(args.scenario)
    if args.bucket_seconds is not None:
        if args.bucket_seconds <= 0:
            raise InvalidScenario("時間區間長度必須大於 0")
        scenario = replace(scenario, bucket_ms=int(round(args.bucket_seconds * 1000)))
    out = Path(args.out)
    transparency = build_report(scenario, args.link)
    if args.transparency_only:
        print(transparency.to_text(), end="")
        export_transparency(transparency, out)
        return EXIT_OK

    seeds = args.seeds or list(scenario.seeds)
    variants = dict(_variants(scenario, args.model))
    print(f"情境: {scenario.name}  模型: {', '.join(variants)}  種子: {len(seeds)} 個")
    print()

    logs: Dict[str, List[EventLog]] = {}
    summaries: Dict[str, MetricsSummary] = {}
    (out / "events").mkdir(parents=True, exist_ok=True)
    (out / "series").mkdir(parents=True, exist_ok=True)
    for label, variant in variants.items():
        results = simulate_all([(variant, seed, not args.no_check) for seed in seeds], args.jobs)
        logs[label] = [log for log, _ in results]
        summaries[label] = average_summaries(_resummarize(results, variant, args.link))
        for seed, (log, _) in zip(seeds, results):
            log.write(out / "events" / f"{label}-seed{seed}.tsv")
            export_series(time_series(log, variant, args.link), out / "series" / f"{label}-seed{seed}.csv")
        print(f"✓ {label}: {len(results)} 次模擬完成")

    frfs = BamModel.FRFS.value.lower()
    if frfs in logs:
        for label in logs:
            _check_pairing(logs[label], logs[frfs])

    failed = False
    print()
    for label, variant in variants.items():
        report = ConformanceReport()
        report = report.with_verdict(merge_verdicts(
            [check_exceptionality(log, variant.link_configs()) for log in logs[label]]))
        focus = variant.focus_link if args.link is None else args.link
        report = report.with_verdict(check_non_discrimination(
            create_engine(variant.models[focus]), variant.link_config(focus), args.decision_points, seed=seeds[0]))
        if frfs in summaries and label != frfs:
            bam, base = summaries[label].overall, summaries[frfs].overall
            report = report.with_verdict(proportionality_verdict(
                bam.mean_utilization, bam.mean_block_rate, base.mean_utilization, base.mean_block_rate,
                variant.equivalence_band))
        failed |= not report.passed
        export_results(summaries[label], report, out, args.format, prefix=f"{label}-")
        _print_report(label, report)

    export_transparency(transparency, out)
    if len(summaries) > 1:
        export_comparison(summaries, out / "comparison.csv")

    print()
    print("=" * 60)
    print("計算結果（各種子平均）")
    print("=" * 60)
    _print_table(summaries)
    print("=" * 60)
    print(f"結果已輸出至 {out}")
    return EXIT_FAIL if failed and args.strict else EXIT_OK


def _variants(scenario: Scenario, models: Optional[Sequence[BamModel]]):
    if not models:
        return [(scenario.model_label.lower(), scenario)]
    return [(model.value.lower(), scenario.with_model(model)) for model in models]


def command_sweep(args) -> int:
    print("=" * 60)
    print("模型比較掃描")
    print("=" * 60)
    base = parse_scenario(args.scenario)
    seeds = args.seeds or list(base.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    rows = []

    with ResultDatabase(out / "results.db") as db:
        for multiplier in args.load_multipliers:
            scenario = base.scaled(multiplier)
            print(f"負載倍數 {multiplier:.2f}")
            logs: Dict[str, List[EventLog]] = {}
            summaries: Dict[str, MetricsSummary] = {}
            for label, variant in _variants(scenario, args.model):
                results = simulate_all([(variant, seed, not args.no_check) for seed in seeds], args.jobs)
                logs[label] = [log for log, _ in results]
                per_seed = _resummarize(results, variant, args.link)
                summaries[label] = average_summaries(per_seed)
                for log, summary in zip(logs[label], per_seed):
                    run_id = db.insert_run(log, multiplier)
                    db.insert_summary(run_id, summary)
                overall = summaries[label].overall
                print(f"  ✓ {label:<5} 平均使用率 {format_value(overall.mean_utilization):>7}%"
                      f"  平均阻擋率 {format_value(overall.mean_block_rate):>7}%")

            frfs = BamModel.FRFS.value.lower()
            for label, summary in summaries.items():
                row = {"load_multiplier": multiplier, "model": label,
                       "mean_utilization": summary.overall.mean_utilization,
                       "mean_block_rate": summary.overall.mean_block_rate,
                       "accepted": sum(len(log.of_kind(EventKind.ACCEPT)) for log in logs[label]),
                       "proportionality": "-"}
                if frfs in summaries and label != frfs:
                    _check_pairing(logs[label], logs[frfs])
                    base_overall = summaries[frfs].overall
                    verdict = proportionality_verdict(
                        summary.overall.mean_utilization, summary.overall.mean_block_rate,
                        base_overall.mean_utilization, base_overall.mean_block_rate, scenario.equivalence_band)
                    row["proportionality"] = verdict.verdict
                    failed |= not verdict.passed
                rows.append(row)

            for line in dominance_lines(logs):
                print(f"  {line}")
            print()

    _write_sweep(rows, out / "sweep.csv")
    print("=" * 60)
    print(f"掃描完成，共 {len(rows)} 組結果，已存入 {out / 'results.db'}")
    return EXIT_FAIL if failed and args.strict else EXIT_OK


def dominance_lines(logs: Dict[str, List[EventLog]]) -> List[str]:
    """相同請求序列下，各模型允入 LSP 數量是否滿足 MAM ≤ RDM ≤ ATCS"""
    order = [m.value.lower() for m in (BamModel.MAM, BamModel.RDM, BamModel.ATCS) if m.value.lower() in logs]
    if len(order) < 2:
        return []
    lines = []
    for index, traces in enumerate(zip(*(logs[label] for label in order))):
        counts = [len(log.of_kind(EventKind.ACCEPT)) for log in traces]
        holds = all(a <= b for a, b in zip(counts, counts[1:]))
        mark = "✓" if holds else "✗"
        detail = " ≤ ".join(f"{label.upper()} {count}" for label, count in zip(order, counts))
        lines.append(f"{mark} 種子 {traces[0].header.get('seed')}: {detail}")
    return lines


def _write_sweep(rows, path: Path):
    frame = pd.DataFrame(rows, columns=["load_multiplier", "model", "mean_utilization", "mean_block_rate",
                                        "accepted", "proportionality"])
    export_series(frame, path)


def command_check(args) -> int:
    print("=" * 60)
    print("事件紀錄符合性檢查")
    print("=" * 60)
    scenario = parse_scenario(args.scenario)
    if args.events:
        log = EventLog.read(args.events)
    else:
        if args.run_id is None:
            raise CorruptLog("使用 --db 時必須指定 --run-id")
        with ResultDatabase(args.db) as db:
            log = db.get_events(args.run_id)

    model = log.header.get("model")
    if model and "+" not in model:
        scenario = scenario.with_model(BamModel.parse(model))
    problems = log.problems(scenario.duration_ms)
    if problems:
        raise CorruptLog("; ".join(problems[:5]))

    report = ConformanceReport().with_verdict(check_exceptionality(log, scenario.link_configs()))
    if args.frfs_events:
        baseline = EventLog.read(args.frfs_events)
        _check_pairing([log], [baseline])
        bam = summarize(log, scenario, args.link).overall
        base = summarize(baseline, scenario.with_model(BamModel.FRFS), args.link).overall
        report = report.with_verdict(proportionality_verdict(
            bam.mean_utilization, bam.mean_block_rate, base.mean_utilization, base.mean_block_rate,
            scenario.equivalence_band))
    _print_report(model or scenario.model_label, report)
    print("=" * 60)
    return EXIT_FAIL if args.strict and not report.passed else EXIT_OK


COMMANDS = {
    "run": command_run,
    "sweep": command_sweep,
    "check": command_check,
    "transparency": command_transparency,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主程式"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("❌ 錯誤: --jobs 必須至少為 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except ScenarioParseError as e:
        print(f"❌ 情境檔錯誤: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ScenarioValidationError, InvalidScenario, ConfigError, UnknownLink) as e:
        print(f"❌ 情境設定錯誤: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CorruptLog, TraceMismatch) as e:
        print(f"❌ 事件紀錄錯誤: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (BandwidthBrokerError, OSError) as e:
        print(f"❌ 執行錯誤: {e}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    exit(main())
