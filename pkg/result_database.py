"""
結果資料庫模組
模擬執行、事件紀錄與指標摘要的 SQLite 儲存與查詢
"""

import io
import json
import logging
import sqlite3
from typing import List, Optional

import pandas as pd

from event_log import COLUMNS, EVENTS_SCHEMA_VERSION, CorruptLog, EventLog
from metrics_engine import MetricsSummary

logger = logging.getLogger(__name__)

# 事件欄位名稱在資料表中的對應（class 為保留字）
_EVENT_FIELDS = [("class_id" if c == "class" else c) for c in COLUMNS]


class ResultDatabase:
    """模擬結果資料庫管理類別"""

    def __init__(self, db_path: str = "results.db"):
        """
        初始化資料庫連線

        Args:
            db_path: 資料庫檔案路徑
        """
        self.db_path = str(db_path)
        self.conn = None
        self._init_database()

    def _init_database(self):
        """初始化資料庫結構"""
        self.conn = sqlite3.connect(self.db_path, check_same_thread=False)
        cursor = self.conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id INTEGER PRIMARY KEY AUTOINCREMENT,
                scenario TEXT NOT NULL,
                model TEXT NOT NULL,
                seed INTEGER NOT NULL,
                header TEXT NOT NULL,
                load_multiplier REAL DEFAULT 1.0,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS events (
                run_id INTEGER NOT NULL,
                seq INTEGER NOT NULL,
                time_ms INTEGER NOT NULL,
                kind TEXT NOT NULL,
                request INTEGER NOT NULL,
                class_id INTEGER NOT NULL,
                bw_kbps INTEGER NOT NULL,
                links TEXT NOT NULL,
                phase INTEGER NOT NULL,
                user TEXT NOT NULL,
                cause TEXT NOT NULL,
                at TEXT NOT NULL,
                breakdown TEXT NOT NULL,
                PRIMARY KEY (run_id, seq)
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS summaries (
                run_id INTEGER NOT NULL,
                link TEXT NOT NULL,
                phase INTEGER NOT NULL,
                class_id INTEGER,
                arrivals INTEGER NOT NULL,
                blocked INTEGER NOT NULL,
                utilization REAL NOT NULL,
                block_rate REAL,
                preemption_pct REAL,
                devolution_pct REAL
            )
        """)

        cursor.execute("""
            CREATE INDEX IF NOT EXISTS idx_runs_scenario_model
            ON runs(scenario, model)
        """)

        # 遷移：為舊資料庫新增 load_multiplier 欄位
        try:
            cursor.execute("SELECT load_multiplier FROM runs LIMIT 1")
        except sqlite3.OperationalError:
            cursor.execute("""
                ALTER TABLE runs ADD COLUMN load_multiplier REAL DEFAULT 1.0
            """)
            logger.info("已為 runs 資料表新增 load_multiplier 欄位")

        self.conn.commit()

    def insert_run(self, log: EventLog, load_multiplier: float = 1.0) -> int:
        """
        新增一次執行（含所有事件）

        Args:
            log: 事件紀錄（標頭需含 scenario、model、seed）
            load_multiplier: 負載倍數

        Returns:
            run_id
        """
        header = log.header
        cursor = self.conn.cursor()
        cursor.execute("""
            INSERT INTO runs (scenario, model, seed, header, load_multiplier)
            VALUES (?, ?, ?, ?, ?)
        """, (header.get("scenario", ""), header.get("model", ""), int(header.get("seed", 0)),
              json.dumps(dict(sorted(header.items()))), float(load_multiplier)))
        run_id = cursor.lastrowid
        self.insert_events(run_id, log)
        return run_id

    def insert_events(self, run_id: int, log: EventLog):
        frame = log.to_frame()
        rows = [(run_id, seq, *values) for seq, values in enumerate(frame.itertuples(index=False, name=None))]
        placeholders = ", ".join("?" * (len(_EVENT_FIELDS) + 2))
        self.conn.executemany(
            f"INSERT INTO events (run_id, seq, {', '.join(_EVENT_FIELDS)}) VALUES ({placeholders})",
            [tuple(int(v) if hasattr(v, "item") else v for v in row) for row in rows],
        )
        self.conn.commit()

    def insert_summary(self, run_id: int, summary: MetricsSummary):
        """整體（phase 0）與各階段指標；class_id 為 NULL 代表整條鏈路"""
        link = f"{summary.link[0]}-{summary.link[1]}"
        rows = []
        for phase, s in enumerate((summary.overall,) + tuple(summary.phases)):
            for m in tuple(s.per_class) + (s.aggregate,):
                rows.append((run_id, link, phase, m.class_id, m.arrivals, m.blocked, m.utilization,
                             m.block_rate, m.preemption_pct, m.devolution_pct))
        self.conn.executemany("""
            INSERT INTO summaries (run_id, link, phase, class_id, arrivals, blocked, utilization,
                                   block_rate, preemption_pct, devolution_pct)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, rows)
        self.conn.commit()

    def get_events(self, run_id: int) -> EventLog:
        """
        取回一次執行的事件紀錄

        Raises:
            CorruptLog: 找不到此執行
        """
        cursor = self.conn.cursor()
        cursor.execute("SELECT header FROM runs WHERE run_id = ?", (run_id,))
        found = cursor.fetchone()
        if found is None:
            raise CorruptLog(f"資料庫中沒有執行 {run_id}")
        header = json.loads(found[0])

        frame = pd.read_sql_query(
            f"SELECT {', '.join(_EVENT_FIELDS)} FROM events WHERE run_id = ? ORDER BY seq",
            self.conn, params=(run_id,),
        )
        frame.columns = COLUMNS
        meta = " ".join(f"{key}={value}" for key, value in sorted(header.items()))
        buffer = io.StringIO()
        buffer.write(f"# bamsim-events v{EVENTS_SCHEMA_VERSION} {meta}".rstrip() + "\n")
        frame.to_csv(buffer, sep="\t", index=False, lineterminator="\n")
        return EventLog.loads(buffer.getvalue())

    def list_runs(self, scenario: Optional[str] = None) -> pd.DataFrame:
        query = "SELECT run_id, scenario, model, seed, load_multiplier FROM runs"
        params = ()
        if scenario is not None:
            query += " WHERE scenario = ?"
            params = (scenario,)
        return pd.read_sql_query(query + " ORDER BY run_id", self.conn, params=params)

    def get_summary_table(self, phase: int = 0) -> pd.DataFrame:
        """各模型與負載倍數下，跨種子平均的類別指標"""
        query = """
            SELECT r.scenario, r.model, r.load_multiplier, s.class_id,
                   AVG(s.utilization) AS utilization, AVG(s.block_rate) AS block_rate,
                   COUNT(DISTINCT r.seed) AS seeds
            FROM summaries s JOIN runs r ON r.run_id = s.run_id
            WHERE s.phase = ? AND s.class_id IS NOT NULL
            GROUP BY r.scenario, r.model, r.load_multiplier, s.class_id
            ORDER BY r.scenario, r.model, r.load_multiplier, s.class_id
        """
        return pd.read_sql_query(query, self.conn, params=(phase,))

    def get_runs_count(self) -> int:
        cursor = self.conn.cursor()
        cursor.execute("SELECT COUNT(*) FROM runs")
        return cursor.fetchone()[0]

    def get_event_records_count(self) -> int:
        cursor = self.conn.cursor()
        cursor.execute("SELECT COUNT(*) FROM events")
        return cursor.fetchone()[0]

    def run_ids(self) -> List[int]:
        return self.list_runs()["run_id"].tolist()

    def close(self):
        """關閉資料庫連線"""
        if self.conn:
            self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
