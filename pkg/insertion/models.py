from datetime import datetime

from sqlalchemy import Boolean, Column, DateTime, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class TrialRecord(Base):
    __tablename__ = "trial_results"

    id = Column(Integer, primary_key=True, index=True)
    config = Column(String(100), nullable=False, index=True)
    object = Column(String(200), nullable=False)
    mode = Column(String(20), nullable=False)  # full, naive, open_loop
    compliance = Column(String(50), nullable=False)
    noise = Column(String(10), nullable=False)  # none, n5, n10
    seed = Column(Integer, nullable=False)

    success = Column(Boolean, nullable=False)
    servo_ticks = Column(Integer, nullable=False)
    total_ticks = Column(Integer, nullable=False)
    hand_actions = Column(Integer, nullable=False)
    failure_cause = Column(String(20), nullable=False, default="none")
    oscillations = Column(Integer, nullable=False, default=0)

    created_at = Column(DateTime, default=datetime.utcnow)

    def __repr__(self):
        return f"<TrialRecord(config='{self.config}', seed={self.seed}, success={self.success})>"
