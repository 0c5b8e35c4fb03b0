from __future__ import annotations

import logging

from flask import current_app, has_app_context


def lab_logger(name: str = "fplab") -> logging.Logger:
    if has_app_context():
        return current_app.logger
    return logging.getLogger(name)


def note(logs: list[str] | None, message: str, level: int = logging.INFO) -> None:
    """Append a progress line to `logs` and mirror it to the application logger."""
    if logs is not None:
        logs.append(message)
    lab_logger().log(level, message)
