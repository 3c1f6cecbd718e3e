from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker

from src.core.config import settings
from src.core.models import Base


def make_engine(url: str | None = None) -> Engine:
    return create_engine(url or settings.ledger_url)


def init_db(engine: Engine) -> None:
    """Creates the ledger tables if they don't exist."""
    Base.metadata.create_all(bind=engine)


def make_session_factory(engine: Engine) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
