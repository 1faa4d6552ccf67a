import datetime

from sqlalchemy import TIMESTAMP, Column, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class ChainRun(Base):
    __tablename__ = "chain_run"

    id = Column(Integer, primary_key=True)
    model_name = Column(String(200), nullable=False)
    seed = Column(Integer)
    iterations = Column(Integer, nullable=False)
    burnin = Column(Integer, default=0)
    parameters = Column(Text, nullable=False)  # comma separated, trace column order
    acceptance_rate = Column(Float)
    created = Column(TIMESTAMP, default=datetime.datetime.utcnow)

    records = relationship("TraceRecord", back_populates="run", cascade="all, delete-orphan")


class TraceRecord(Base):
    __tablename__ = "trace_record"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("chain_run.id"), nullable=False, index=True)
    iteration = Column(Integer, nullable=False)
    parameter = Column(String(100), nullable=False)
    value = Column(Float)

    run = relationship("ChainRun", back_populates="records")
