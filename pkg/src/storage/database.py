"""Run ledger database.

Records every CLI run and the artifacts it wrote. SQLAlchemy 2.0 over
SQLite; pass ``":memory:"`` for a throwaway ledger.
"""

from __future__ import annotations

import logging
from datetime import datetime, timezone
from pathlib import Path

from sqlalchemy import create_engine, func, select
from sqlalchemy.orm import Session, sessionmaker

from src.storage.models import ArtifactRecord, Base, RunRecord

logger = logging.getLogger(__name__)

DEFAULT_DB_NAME = "ledger.db"
MEMORY = ":memory:"


class Database:
    """Manages the SQLite connection and provides ledger helpers."""

    def __init__(self, db_path: Path | str, echo: bool = False):
        if str(db_path) == MEMORY:
            self.db_path = MEMORY
            self.engine = create_engine("sqlite://", echo=echo)
        else:
            db_path = Path(db_path)
            db_path.parent.mkdir(parents=True, exist_ok=True)
            self.db_path = db_path
            self.engine = create_engine(f"sqlite:///{db_path}", echo=echo)
        self.SessionLocal = sessionmaker(bind=self.engine, expire_on_commit=False)

    def create_tables(self) -> None:
        """Create all tables if they don't exist."""
        Base.metadata.create_all(self.engine)
        logger.debug("Ledger tables ready at %s", self.db_path)

    def get_session(self) -> Session:
        return self.SessionLocal()

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------

    def start_run(self, command: str, config_digest: str, seed: int) -> RunRecord:
        with self.get_session() as session:
            run = RunRecord(command=command, config_digest=config_digest, seed=seed)
            session.add(run)
            session.commit()
            return run

    def finish_run(self, run_id: str, status: str = "completed", error: str | None = None) -> None:
        with self.get_session() as session:
            run = session.get(RunRecord, run_id)
            if run is None:
                logger.warning("Unknown run %s", run_id)
                return
            run.status = status
            run.completed_at = datetime.now(timezone.utc)
            if error:
                run.errors += 1
                run.error_details = [*run.error_details, error]
            session.commit()

    def record_artifact(self, run_id: str, kind: str, path: Path | str, digest: str | None, size: int) -> None:
        with self.get_session() as session:
            session.add(ArtifactRecord(run_id=run_id, kind=kind, path=str(path), digest=digest, bytes=size))
            session.commit()

    # ------------------------------------------------------------------
    # Query helpers
    # ------------------------------------------------------------------

    def get_run(self, run_id: str) -> RunRecord | None:
        with self.get_session() as session:
            return session.get(RunRecord, run_id)

    def latest_artifact(self, kind: str) -> ArtifactRecord | None:
        """Most recently recorded artifact of ``kind``."""
        with self.get_session() as session:
            return session.execute(
                select(ArtifactRecord)
                .where(ArtifactRecord.kind == kind)
                .order_by(ArtifactRecord.created_at.desc(), ArtifactRecord.id.desc())
                .limit(1)
            ).scalar_one_or_none()

    def stats(self) -> dict:
        with self.get_session() as session:
            total_runs = session.execute(select(func.count(RunRecord.id))).scalar_one()
            failed_runs = session.execute(
                select(func.count(RunRecord.id)).where(RunRecord.status == "failed")
            ).scalar_one()
            total_artifacts = session.execute(select(func.count(ArtifactRecord.id))).scalar_one()
            commands = session.execute(select(func.count(func.distinct(RunRecord.command)))).scalar_one()
            return {
                "total_runs": total_runs,
                "failed_runs": failed_runs,
                "total_artifacts": total_artifacts,
                "distinct_commands": commands,
            }
