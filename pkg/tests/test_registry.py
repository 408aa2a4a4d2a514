"""Run registry and cell-cache index rows."""
import pytest
from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker

from db.base import Base
from db.models import CellCacheEntry
from db.registry import list_runs, lookup_cell, record_cell, record_run_finish, record_run_start, x_key


@pytest.fixture
def db_session():
    engine = create_engine("sqlite:///:memory:")
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine)
    session = Session()
    yield session
    session.close()


def test_run_lifecycle(db_session):
    first = record_run_start(db_session, "abc", "ou_forward", 7, 1000, "results/ou_forward")
    record_run_start(db_session, "def", "ou_backward", 8, 500, "results/ou_backward")
    assert first.exit_code is None

    done = record_run_finish(db_session, first.id, 1)
    assert done.exit_code == 1
    assert done.finished_at is not None
    assert record_run_finish(db_session, 999, 0) is None

    assert [r.name for r in list_runs(db_session)] == ["ou_forward", "ou_backward"]
    assert [r.seed for r in list_runs(db_session, "def")] == [8]


def test_record_cell_upserts(db_session):
    record_cell(db_session, "ou:1", [0.5], 0.0, "g1", "analytic_ou", "cell_a")
    record_cell(db_session, "ou:1", [0.5], 0.0, "g1", "analytic_ou", "cell_b")
    rows = db_session.scalars(select(CellCacheEntry)).all()
    assert len(rows) == 1
    assert rows[0].file_stem == "cell_b"


def test_lookup_cell_separates_variants(db_session):
    record_cell(db_session, "ud:1", [1.0], 0.0, "g1", "numeric_fd", "plain")
    record_cell(db_session, "ud:1", [1.0], 0.0, "g1", "numeric_fd", "rev", variant="reversed")
    assert lookup_cell(db_session, "ud:1", [1.0], 0.0, "g1", "numeric_fd").file_stem == "plain"
    assert lookup_cell(db_session, "ud:1", [1.0], 0.0, "g1", "numeric_fd", "reversed").file_stem == "rev"
    assert lookup_cell(db_session, "ud:1", [1.0], 0.0, "g2", "numeric_fd") is None


def test_x_key_rounds_noise():
    assert x_key([0.1 + 0.2]) == x_key([0.3])
    assert x_key([1, 2]) == "[1.0, 2.0]"
