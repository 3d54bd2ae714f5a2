"""
Results database: engine/session setup plus storing and aggregating trials
"""

import logging
from typing import List, Optional, Sequence

from sqlalchemy import create_engine
from sqlalchemy.orm import Session, sessionmaker

from .models import Base, TrialRecord
from .schemas import ExperimentConfig, SummaryRow, TrialResult
from .utils import get_config

logger = logging.getLogger(__name__)

# Database configuration
DATABASE_URL = get_config()["database_url"]


def make_engine(url: str = DATABASE_URL):
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


engine = make_engine()

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def create_tables(bind=None):
    """Create all tables in the database"""
    Base.metadata.create_all(bind=bind or engine)


def open_session(url: str = DATABASE_URL) -> Session:
    """Create the tables behind url and open a session on it"""
    if url == DATABASE_URL:
        create_tables()
        return SessionLocal()
    bind = make_engine(url)
    create_tables(bind)
    return sessionmaker(autocommit=False, autoflush=False, bind=bind)()


def store_results(db: Session, cfg: ExperimentConfig, results: Sequence[TrialResult]) -> List[TrialRecord]:
    records = [
        TrialRecord(config=cfg.name, object=cfg.object, mode=cfg.mode.value, compliance=cfg.compliance.value,
                    noise=cfg.noise_level.value, seed=r.seed, success=r.success, servo_ticks=r.servo_ticks,
                    total_ticks=r.total_ticks, hand_actions=r.hand_actions,
                    failure_cause=r.failure_cause.value, oscillations=r.oscillations)
        for r in results
    ]
    db.add_all(records)
    db.commit()
    logger.info(f"stored {len(records)} trials for {cfg.name}")
    return records


def summary_rows(db: Session, config: Optional[str] = None) -> List[SummaryRow]:
    """Aggregate stored trials per (config, object, mode, compliance, noise), in insertion order"""
    from .harness import summarize_labels

    query = db.query(TrialRecord).order_by(TrialRecord.id)
    if config is not None:
        query = query.filter(TrialRecord.config == config)

    groups = {}
    for rec in query.all():
        key = (rec.config, rec.object, rec.mode, rec.compliance, rec.noise)
        groups.setdefault(key, []).append(TrialResult.model_validate(rec))
    return [summarize_labels(*key, results) for key, results in groups.items()]
