import uuid
from datetime import datetime, timezone

from sqlalchemy import JSON, Column, DateTime, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class SimRun(Base):
    """One matrix cell (scenario, seed, mode). Wall-clock bookkeeping only, never read back by the simulator."""

    __tablename__ = "sim_runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True, default=lambda: str(uuid.uuid4()))
    scenario_name = Column(String, index=True)
    scenario_hash = Column(String)
    seed = Column(Integer)
    mode = Column(String)
    start_time = Column(DateTime, default=_utcnow)
    end_time = Column(DateTime, nullable=True)
    status = Column(String, default="RUNNING")  # SUCCESS, FAILURE
    duration_ms = Column(Integer, nullable=True)
    events_processed = Column(Integer, default=0)
    error_message = Column(String, nullable=True)
    metadata_json = Column(JSON, nullable=True)
