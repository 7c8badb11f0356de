"""
Logging configuration for tierplan.
"""
import logging
from rich.logging import RichHandler


def setup_logging(level: str | int = logging.INFO) -> logging.Logger:
    """Configure and set up logging for the application."""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    logging.basicConfig(
        level=level,
        format="| %(levelname)-8s | %(name)s | %(message)s",
        datefmt="[%Y-%m-%d %H:%M:%S]",
        handlers=[RichHandler(rich_tracebacks=True)],
        force=True  # replace existing handlers
    )

    logger = logging.getLogger("tierplan")
    logger.setLevel(level)
    return logger
