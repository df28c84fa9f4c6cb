import logging
import os
from typing import Optional


class StepChatterFilter(logging.Filter):
    """Drop per-step training records unless DEBUG is active.

    The training loop tags its per-micro-batch records with
    ``extra={"step_chatter": True}``.
    """

    def __init__(self, debug: bool):
        super().__init__()
        self.debug = debug

    def filter(self, record):
        if getattr(record, "step_chatter", False) and not self.debug:
            return False
        return True


def configure_logging(level: Optional[str] = None):
    """Configure logging with custom filters."""
    # Explicit level wins over the environment variable
    log_level = (level or os.environ.get("PYTHONLOGLEVEL", "INFO")).upper()
    numeric = getattr(logging, log_level, logging.INFO)

    logging.basicConfig(
        level=numeric,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    # Records propagated from package loggers only pass through handler filters
    root_logger = logging.getLogger()
    root_logger.setLevel(numeric)
    for handler in root_logger.handlers:
        if not any(isinstance(f, StepChatterFilter) for f in handler.filters):
            handler.addFilter(StepChatterFilter(debug=numeric <= logging.DEBUG))

    dualstr_logger = logging.getLogger("dualstr")
    dualstr_logger.setLevel(numeric)
