from pathlib import Path

import pytest
import structlog
from sqlalchemy import create_engine
from sqlalchemy.orm import Session
from sqlalchemy.pool import StaticPool

from src.core.database import init_db, make_session_factory
from src.ingestion.loader import load_scenario
from src.schemas.scenario import Mode, Scenario
from src.services.simulation import SimulationResult, run

REPO_ROOT = Path(__file__).resolve().parents[2]
SCENARIO_DIR = REPO_ROOT / "scenarios"
CASESTUDY = SCENARIO_DIR / "casestudy.scenario"


@pytest.fixture(autouse=True)
def _reset_structlog():
    """CLI tests configure structlog against pytest's captured stderr; drop that binding once the stream closes."""
    yield
    structlog.reset_defaults()


@pytest.fixture(scope="session")
def casestudy() -> Scenario:
    return load_scenario(CASESTUDY)


@pytest.fixture
def engine():
    """In-memory SQLite shared across connections for the length of one test."""
    eng = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    init_db(eng)
    yield eng
    eng.dispose()


@pytest.fixture
def db(engine) -> Session:
    factory = make_session_factory(engine)
    session = factory()
    try:
        yield session
    finally:
        session.close()


@pytest.fixture(scope="session")
def casestudy_waan(casestudy) -> SimulationResult:
    return run(casestudy.with_mode(Mode.WAAN), 1)


@pytest.fixture(scope="session")
def casestudy_baseline(casestudy) -> SimulationResult:
    return run(casestudy.with_mode(Mode.BASELINE), 1)
