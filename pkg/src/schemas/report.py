from typing import List, Optional

from pydantic import BaseModel, Field


class IntentReport(BaseModel):
    scenario: str
    seed: int
    mode: str
    intent_id: str
    user_id: str
    work_units: int = Field(ge=0)
    completion_time_ms: Optional[int] = None
    total_executed_units: int = Field(ge=0)
    recomputed_units: int = Field(ge=0)
    handover_outcomes: List[str] = Field(default_factory=list)
    stale_discards: int = Field(default=0, ge=0)
    qoe_met: Optional[bool] = None

    @property
    def recompute_pct(self) -> float:
        return 100.0 * self.recomputed_units / self.work_units if self.work_units else 0.0


class RunReport(BaseModel):
    scenario: str
    scenario_hash: str
    seed: int
    mode: str
    intents: List[IntentReport] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def handover_success_rate(self) -> Optional[float]:
        outcomes = [o for i in self.intents for o in i.handover_outcomes]
        if not outcomes:
            return None
        return sum(1 for o in outcomes if o != "Abort") / len(outcomes)
