import logging
from typing import Optional

import pandas as pd

from bffg.db.database import SessionLocal, get_engine
from bffg.db.models import Base, ChainRun, TraceRecord

logger = logging.getLogger(__name__)


def create_tables(url: Optional[str] = None):
    Base.metadata.create_all(bind=get_engine(url))


def save_trace(trace, model_name: str, seed: Optional[int] = None, url: Optional[str] = None) -> int:
    """Store every trace cell in long format; returns the new run id."""
    try:
        create_tables(url)
        frame = trace.frame()
        with SessionLocal(url) as db:
            run = ChainRun(
                model_name=model_name,
                seed=seed,
                iterations=len(frame),
                burnin=trace.burnin,
                parameters=",".join(trace.parameter_names),
                acceptance_rate=trace.acceptance_rate() if len(frame) else None,
            )
            long = frame.reset_index().melt(id_vars="iteration", var_name="parameter")
            run.records = [
                TraceRecord(iteration=int(row.iteration), parameter=row.parameter, value=float(row.value))
                for row in long.itertuples(index=False)
            ]
            db.add(run)
            db.commit()
            logger.info(f"Trace of {len(frame)} iterations saved as run {run.id}")
            return run.id
    except Exception as e:
        logger.error(f"Error saving trace: {e}")
        raise


def load_trace(run_id: int, url: Optional[str] = None):
    """Wide frame of a stored run, indexed by iteration."""
    with SessionLocal(url) as db:
        run = db.get(ChainRun, run_id)
        if run is None:
            raise KeyError(f"no chain run with id {run_id}")
        rows = [(r.iteration, r.parameter, r.value) for r in run.records]
    frame = pd.DataFrame(rows, columns=["iteration", "parameter", "value"])
    return frame.pivot(index="iteration", columns="parameter", values="value")
