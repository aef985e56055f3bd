"""
窮舉參考引擎（僅供測試）
以單位頻寬為粒度，逐單位套用借用順序與回收規則，與 bam_engine 的結果比對
"""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from bandwidth_model import BamModel


@dataclass
class OracleLsp:
    """units[i] 為第 i 個單位的捐出類別"""

    request_id: int
    class_id: int
    units: List[int]
    seq: int


@dataclass
class OracleLink:
    model: BamModel
    bc: Dict[int, int]
    public: Dict[int, int]
    priority: Dict[int, int]
    lsps: Dict[int, OracleLsp] = field(default_factory=dict)
    seq: int = 0

    def drawn(self, donor: int) -> int:
        return sum(lsp.units.count(donor) for lsp in self.lsps.values())

    def lent(self, donor: int) -> int:
        return sum(lsp.units.count(donor) for lsp in self.lsps.values() if lsp.class_id != donor)

    def can_lend(self, donor: int) -> bool:
        return self.drawn(donor) < self.bc[donor] and self.lent(donor) < self.public[donor]

    def donors(self, class_id: int) -> List[int]:
        ranked = sorted(self.bc, key=lambda k: self.priority[k])
        if self.model is BamModel.ATCS:
            return [k for k in ranked if k != class_id]
        if self.model is BamModel.RDM:
            return [k for k in ranked if self.priority[k] > self.priority[class_id]]
        return []

    def pick(self, class_id: int, exclude: Optional[int] = None) -> Optional[int]:
        """下一個單位的來源：自身 BC 優先，其次依序向捐出類別借用"""
        if class_id != exclude and self.drawn(class_id) < self.bc[class_id]:
            return class_id
        for donor in self.donors(class_id):
            if donor != exclude and self.can_lend(donor):
                return donor
        return None

    def place(self, request_id: int, class_id: int, demand: int) -> bool:
        """逐單位放入新的 LSP；任何一個單位放不下就整筆撤回"""
        lsp = OracleLsp(request_id, class_id, [], self.seq + 1)
        self.lsps[request_id] = lsp
        for _ in range(demand):
            donor = self.pick(class_id)
            if donor is None:
                del self.lsps[request_id]
                return False
            lsp.units.append(donor)
        self.seq += 1
        return True

    def reclaim(self, owner: int, needed: int) -> List[Tuple[str, int]]:
        borrowers = sorted(
            (lsp for lsp in self.lsps.values() if lsp.class_id != owner and owner in lsp.units),
            key=lambda lsp: (self.priority[lsp.class_id], -lsp.seq),
        )
        effects = []
        freed = 0
        for victim in borrowers:
            if freed >= needed:
                break
            taken = victim.units.count(owner)
            victim.units = [donor for donor in victim.units if donor != owner]
            effect = ("Devolution", victim.request_id)
            for _ in range(taken):
                donor = self.pick(victim.class_id, exclude=owner)
                if donor is None:
                    del self.lsps[victim.request_id]
                    effect = ("Preemption", victim.request_id)
                    break
                victim.units.append(donor)
            effects.append(effect)
            freed += taken
        return effects

    def admit(self, request_id: int, class_id: int, demand: int = 1) -> Tuple[str, List[Tuple[str, int]]]:
        """回傳 ("accept" | "block", [(回收種類, 受害者)])"""
        if self.model is BamModel.FRFS:
            if self.drawn(0) + demand <= self.bc[0]:
                self.lsps[request_id] = OracleLsp(request_id, class_id, [0] * demand, self.seq + 1)
                self.seq += 1
                return "accept", []
            return "block", []

        trial = copy.deepcopy(self)
        if trial.place(request_id, class_id, demand):
            self._adopt(trial)
            return "accept", []
        if self.lent(class_id) == 0:
            return "block", []

        trial = copy.deepcopy(self)
        free = self.bc[class_id] - self.drawn(class_id)
        effects = trial.reclaim(class_id, min(demand - free, self.lent(class_id)))
        if trial.place(request_id, class_id, demand):
            self._adopt(trial)
            return "accept", effects
        return "block", []

    def release(self, request_id: int):
        del self.lsps[request_id]

    def _adopt(self, other: "OracleLink"):
        self.lsps = other.lsps
        self.seq = other.seq

    def usage(self) -> Dict[Tuple[int, int], int]:
        owner = (lambda lsp: 0) if self.model is BamModel.FRFS else (lambda lsp: lsp.class_id)
        usage: Dict[Tuple[int, int], int] = {}
        for lsp in self.lsps.values():
            for donor in lsp.units:
                key = (owner(lsp), donor)
                usage[key] = usage.get(key, 0) + 1
        return dict(sorted(usage.items()))
