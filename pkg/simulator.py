"""
離散事件模擬器
依情境產生 LSP 請求，驅動路徑允入並輸出可重現的事件紀錄
"""

import logging
from typing import Dict, List, Optional, Tuple

import simpy

from bam_engine import ReclaimKind
from bandwidth_model import ConfigError, LspRequest
from event_log import EventKind, EventLog, EventRecord
from metrics_engine import MetricsSummary, summarize
from path_admission import NoPath, PathAdmission
from scenario import InvalidScenario, Scenario
from traffic_generator import RNG_ALGORITHM, class_stream, generate_workload

logger = logging.getLogger(__name__)


def build_requests(scenario: Scenario, seed: int) -> List[LspRequest]:
    """依階段產生整個模擬期間的請求"""
    requests: List[LspRequest] = []
    for index, (phase, (start, _)) in enumerate(zip(scenario.phases, scenario.phase_bounds())):
        streams = {k: class_stream(seed, k, index) for k in phase.rates}
        requests.extend(generate_workload(
            phase, streams, scenario.workload,
            start_ms=start, first_request_id=len(requests) + 1, phase_index=index + 1,
        ))
    return requests


class Simulator:
    """
    單次模擬執行

    以 simpy 環境序列化所有事件，時間單位為毫秒。
    """

    def __init__(self, scenario: Scenario, seed: int, check_invariants: bool = __debug__):
        """
        初始化模擬器

        Args:
            scenario: 已驗證的情境
            seed: 亂數種子
            check_invariants: 每個事件後檢查所有鏈路帳本條件
        """
        self.scenario = scenario
        self.seed = seed
        self.check_invariants = check_invariants
        self.admission: Optional[PathAdmission] = None
        self.log: Optional[EventLog] = None
        self._users: Dict[int, str] = {}

    def run(self) -> EventLog:
        scenario = self.scenario
        self.log = EventLog({
            "rng": RNG_ALGORITHM,
            "seed": str(self.seed),
            "scenario": scenario.name.replace(" ", "_"),
            "model": scenario.model_label,
        })
        self.admission = PathAdmission(scenario.path_table, scenario.link_configs())
        requests = build_requests(scenario, self.seed)
        logger.info("情境 %s (%s) seed=%d：%d 筆請求", scenario.name, scenario.model_label, self.seed, len(requests))

        env = simpy.Environment()
        env.process(self._arrivals(env, requests))
        env.run(until=scenario.duration_ms)

        # 停止時仍在使用中的 LSP 於停止時間釋放
        for request_id in sorted(self.admission.active):
            allocation = self.admission.teardown_path(request_id)
            self._record(scenario.duration_ms, EventKind.RELEASE, request_id, allocation.class_id,
                         allocation.bandwidth, allocation.links)
        return self.log

    def _record(self, time_ms: int, kind: EventKind, request_id: int, class_id: int, bandwidth: int,
                links, **extra):
        self.log.append(EventRecord(
            time_ms=time_ms,
            kind=kind,
            request_id=request_id,
            class_id=class_id,
            bandwidth=bandwidth,
            links=tuple(links),
            phase=self.scenario.phase_at(min(time_ms, self.scenario.duration_ms - 1)),
            user_id=self._users.get(request_id, ""),
            **extra,
        ))

    def _arrivals(self, env: simpy.Environment, requests: List[LspRequest]):
        for req in requests:
            if req.arrival_ms > env.now:
                yield env.timeout(req.arrival_ms - env.now)
            self._handle_arrival(env, req)

    def _handle_arrival(self, env: simpy.Environment, req: LspRequest):
        now = int(env.now)
        self._users[req.request_id] = req.user_id
        segments = self.scenario.path_table.lookup(req.source, req.destination)
        self._record(now, EventKind.ARRIVAL, req.request_id, req.class_id, req.bandwidth,
                     [seg[2] for seg in segments])

        decision = self.admission.admit_path(req)

        preempted = {allocation.request_id: allocation for allocation in decision.preempted}
        for event in decision.reclaims:
            if event.kind is ReclaimKind.DEVOLUTION:
                self._record(now, EventKind.DEVOLUTION, event.victim_id, event.victim_class, event.freed,
                             [event.link], cause=req.request_id, at=event.link,
                             breakdown=((event.link, event.rehoused),))
            else:
                victim = preempted[event.victim_id]
                self._record(now, EventKind.PREEMPTION, event.victim_id, event.victim_class, victim.bandwidth,
                             victim.links, cause=req.request_id, at=event.link)

        if decision.accepted:
            allocation = decision.allocation
            self._record(now, EventKind.ACCEPT, req.request_id, req.class_id, req.bandwidth, allocation.links,
                         breakdown=tuple((link, allocation.breakdowns[link]) for link in allocation.links))
            env.process(self._holding(env, req))
        else:
            self._record(now, EventKind.BLOCK, req.request_id, req.class_id, req.bandwidth,
                         [decision.blocked_link], at=decision.blocked_link)

        if self.check_invariants:
            self.admission.assert_invariants()

    def _holding(self, env: simpy.Environment, req: LspRequest):
        yield env.timeout(req.holding_ms)
        # 已被搶占的 LSP 不再釋放
        if req.request_id in self.admission.active:
            allocation = self.admission.teardown_path(req.request_id)
            self._record(int(env.now), EventKind.RELEASE, req.request_id, req.class_id, req.bandwidth,
                         allocation.links)
            if self.check_invariants:
                self.admission.assert_invariants()


def run(scenario: Scenario, seed: Optional[int] = None,
        check_invariants: bool = __debug__) -> Tuple[EventLog, MetricsSummary]:
    """
    執行一次模擬

    Args:
        scenario: 情境
        seed: 亂數種子（預設使用情境的第一個種子）
        check_invariants: 每個事件後檢查帳本條件

    Returns:
        (事件紀錄, 指標摘要)

    Raises:
        InvalidScenario: 情境不合法
    """
    scenario.validate()
    seed = scenario.seeds[0] if seed is None else seed
    try:
        log = Simulator(scenario, seed, check_invariants).run()
    except (ConfigError, NoPath) as e:
        raise InvalidScenario(f"模擬失敗: {e}")
    return log, summarize(log, scenario)
