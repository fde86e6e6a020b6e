"""
SQLAlchemy ORM models for the run ledger.

One row per CLI invocation recorded with --db. The manifest written next
to the outputs carries no timestamps; the ledger row is where the run
time lives.
"""
import json
import os
from datetime import datetime, timezone

from sqlalchemy import CheckConstraint, Column, Index, Integer, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

Base = declarative_base()

# ---------------------------------------------------------------------------
# Database connection helpers
# ---------------------------------------------------------------------------

DB_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "fracest.db")


def get_engine(db_path=None):
    path = db_path or DB_PATH
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    engine = create_engine(
        "sqlite:///" + path,
        echo=False,
        connect_args={"check_same_thread": False},
    )
    from sqlalchemy import event as sa_event

    @sa_event.listens_for(engine, "connect")
    def _set_sqlite_pragmas(dbapi_conn, _):
        cursor = dbapi_conn.cursor()
        cursor.execute("PRAGMA journal_mode=WAL")
        cursor.close()

    return engine


def get_session(engine=None):
    eng = engine or get_engine()
    return sessionmaker(bind=eng)()


def init_db(engine=None):
    """Create the ledger table if it does not exist."""
    eng = engine or get_engine()
    Base.metadata.create_all(eng)


def _utcnow():
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class Run(Base):
    __tablename__ = "run"

    id = Column(Integer, primary_key=True, autoincrement=True)
    subcommand = Column(Text, nullable=False)
    manifest_digest = Column(Text, nullable=False)
    seed = Column(Text)  # up to 2**64 - 1, beyond SQLite INTEGER
    version = Column(Text, nullable=False)
    params_json = Column(Text, nullable=False, default="{}")
    outputs_json = Column(Text, nullable=False, default="[]")
    passed = Column(Integer)
    created_at = Column(Text, nullable=False, default=_utcnow)

    __table_args__ = (
        CheckConstraint("passed IN (0, 1) OR passed IS NULL", name="ck_run_passed"),
        Index("ix_run_digest", "manifest_digest"),
    )

    @property
    def params(self):
        return json.loads(self.params_json)

    @property
    def outputs(self):
        return json.loads(self.outputs_json)

    def __repr__(self):
        return "<Run {} {} {}>".format(self.id, self.subcommand, self.manifest_digest[:12])


def record_run(session, manifest, digest, passed=None):
    """Insert one ledger row for a RunManifest; returns the row."""
    from fracest.report import dumps_json

    row = Run(
        subcommand=manifest.subcommand,
        manifest_digest=digest,
        seed=None if manifest.seed is None else str(manifest.seed),
        version=manifest.version,
        params_json=dumps_json(manifest.parameters).strip(),
        outputs_json=json.dumps(list(manifest.outputs)),
        passed=None if passed is None else int(bool(passed)),
    )
    session.add(row)
    session.commit()
    return row
