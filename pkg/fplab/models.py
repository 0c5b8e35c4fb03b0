from __future__ import annotations

from datetime import datetime
from json import loads

from sqlalchemy.orm import Mapped, mapped_column

from . import db


class RunRecord(db.Model):
    __tablename__ = "run_records"

    id: Mapped[int] = mapped_column(primary_key=True, autoincrement=True)
    study: Mapped[str] = mapped_column(nullable=False)
    scenario_label: Mapped[str] = mapped_column(nullable=False)
    content_hash: Mapped[str] = mapped_column(nullable=False, index=True)
    status: Mapped[str] = mapped_column(nullable=False, default="incomplete")
    verdicts: Mapped[str] = mapped_column(nullable=False, default="{}")
    manifest_path: Mapped[str] = mapped_column(nullable=False, default="")
    processing_logs: Mapped[str] = mapped_column(nullable=False, default="")
    created_at: Mapped[datetime] = mapped_column(default=datetime.utcnow, nullable=False)

    def verdicts_as_dict(self) -> dict:
        if not self.verdicts:
            return {}
        try:
            return loads(self.verdicts)
        except ValueError:
            return {}

    def logs_as_list(self) -> list[str]:
        return [line for line in self.processing_logs.splitlines() if line]
