from datetime import datetime
from typing import Optional

from sqlalchemy import DateTime, Float, Index, Integer, String, Text, UniqueConstraint, func
from sqlalchemy.orm import Mapped, mapped_column

from db.base import Base


class CellCacheEntry(Base):
    """One cached cell solve; the arrays live in ``<file_stem>.npz`` under the cache dir."""

    __tablename__ = "cell_cache"
    __table_args__ = (
        UniqueConstraint("model_key", "variant", "x_json", "t", "grid_hash", "backend", name="uq_cell_cache_key"),
        Index("ix_cell_cache_model_grid", "model_key", "grid_hash"),
    )

    id: Mapped[int] = mapped_column(primary_key=True)
    model_key: Mapped[str] = mapped_column(String(128), nullable=False)
    variant: Mapped[str] = mapped_column(String(128), nullable=False, default="")
    x_json: Mapped[str] = mapped_column(Text, nullable=False)
    t: Mapped[float] = mapped_column(Float, nullable=False)
    grid_hash: Mapped[str] = mapped_column(String(32), nullable=False)
    backend: Mapped[str] = mapped_column(String(32), nullable=False)
    file_stem: Mapped[str] = mapped_column(String(255), nullable=False)
    created_at: Mapped[datetime] = mapped_column(DateTime, server_default=func.now())


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id: Mapped[int] = mapped_column(primary_key=True)
    config_hash: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    name: Mapped[str] = mapped_column(String(128), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    n_paths: Mapped[int] = mapped_column(Integer, nullable=False)
    out_dir: Mapped[str] = mapped_column(Text, nullable=False)
    exit_code: Mapped[Optional[int]] = mapped_column(Integer)
    started_at: Mapped[datetime] = mapped_column(DateTime, server_default=func.now())
    finished_at: Mapped[Optional[datetime]] = mapped_column(DateTime)
