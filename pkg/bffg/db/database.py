from functools import lru_cache
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from bffg.config import DB_URL
from bffg.errors import ModelValidationError


# Engines are created on first use; importing this module never connects.
@lru_cache(maxsize=None)
def get_engine(url: Optional[str] = None):
    url = url or DB_URL
    if not url:
        raise ModelValidationError("no database URL: pass --db or set BFFG_DB_URL")
    return create_engine(url, pool_pre_ping=True, future=True)


@lru_cache(maxsize=None)
def get_sessionmaker(url: Optional[str] = None):
    return sessionmaker(bind=get_engine(url), autoflush=False, autocommit=False)


def SessionLocal(url: Optional[str] = None):
    return get_sessionmaker(url)()
