from __future__ import annotations

import os
import tempfile
from pathlib import Path

from fplab import __version__

BASE_DIR = Path(__file__).resolve().parent


def _resolve_sqlite_path(url: str | None) -> str | None:
    if not url:
        return None
    prefix = "sqlite:///"
    if url.startswith(prefix) and not url.startswith("sqlite:////"):
        relative_path = url[len(prefix):]
        absolute_path = (BASE_DIR / relative_path).resolve()
        absolute_path.parent.mkdir(parents=True, exist_ok=True)
        return f"sqlite:///{absolute_path}"
    return url


class Config:
    RESULTS_FOLDER = os.environ.get("RESULTS_FOLDER", str(BASE_DIR / "results"))
    SCENARIO_FOLDER = os.environ.get("SCENARIO_FOLDER", str(BASE_DIR / "scenarios"))
    _default_db_path = BASE_DIR / "instance" / "fplab.sqlite"
    _default_db_path.parent.mkdir(parents=True, exist_ok=True)
    SQLALCHEMY_DATABASE_URI = _resolve_sqlite_path(
        os.environ.get("DATABASE_URL")
    ) or f"sqlite:///{_default_db_path.resolve()}"
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    LINEAR_TOL = float(os.environ.get("LINEAR_TOL", 1e-10))
    LINEAR_MAX_ITER = int(os.environ.get("LINEAR_MAX_ITER", 500))
    AUDIT_SLACK = float(os.environ.get("AUDIT_SLACK", 0.05))
    DEFAULT_KERNEL = os.environ.get("DEFAULT_KERNEL", "bump")
    DELTA0_CELLS = float(os.environ.get("DELTA0_CELLS", 16))
    ROUGH_DELTA0_CELLS = float(os.environ.get("ROUGH_DELTA0_CELLS", 32))
    STABILITY_DELTA0_CELLS = float(os.environ.get("STABILITY_DELTA0_CELLS", 32))
    MIN_DELTA_CELLS = float(os.environ.get("MIN_DELTA_CELLS", 2))
    ROUGH_MIN_DELTA_CELLS = float(os.environ.get("ROUGH_MIN_DELTA_CELLS", 4))
    CFL_FRACTION = float(os.environ.get("CFL_FRACTION", 0.9))
    SDE_BATCH_SIZE = int(os.environ.get("SDE_BATCH_SIZE", 16384))
    MAX_WORKERS = int(os.environ.get("MAX_WORKERS", 4))
    SCENARIO_MATCH_THRESHOLD = int(os.environ.get("SCENARIO_MATCH_THRESHOLD", 78))
    LAW_DISTANCE_THRESHOLD = float(os.environ.get("LAW_DISTANCE_THRESHOLD", 0.05))
    TOOL_VERSION = os.environ.get("TOOL_VERSION", __version__)


class TestConfig(Config):
    TESTING = True
    SQLALCHEMY_DATABASE_URI = "sqlite:///:memory:"
    RESULTS_FOLDER = str(Path(tempfile.gettempdir()) / "fplab-test-results")
    MAX_WORKERS = 2
