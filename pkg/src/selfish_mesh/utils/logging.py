"""Logging utilities."""

import logging
import sys
from pathlib import Path

from loguru import logger

VERBOSE_LEVELS = {"DEBUG", "TRACE"}


class InterceptHandler(logging.Handler):
    """Intercepts standard logging and redirects to Loguru.

    numpy, scipy and the warnings module report through the standard library. Installing this
    handler on the root logger makes those records show up in the same sinks as the
    simulator's own messages.

    Examples:
    ```
    import logging

    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    logging.getLogger("scipy").warning("routed through loguru")
    ```
    """

    @staticmethod
    def emit(record: logging.LogRecord) -> None:
        """Forward one standard-library record to loguru at the matching level.

        Args:
            record: The record emitted by the standard logging module.
        """
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno  # type: ignore [assignment]

        # Walk out of the logging module so loguru reports the real caller.
        frame, depth = sys._getframe(2), 2  # noqa: SLF001
        while frame and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def configure_logging(level: str = "INFO", log_file: Path | None = None) -> None:
    """Configure loguru sinks for the CLI.

    Replaces loguru's default sink with a colourised stderr sink, optionally adds a rotating
    file sink, and routes standard logging and ``warnings`` through `InterceptHandler`.

    Args:
        level: Minimum level name, e.g. ``"INFO"`` or ``"DEBUG"``.
        log_file: Optional path of a log file to write in addition to stderr.
    """
    level = level.upper()
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        colorize=True,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>: <level>{message}</level>"
        if level in VERBOSE_LEVELS
        else "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <level>{message}</level>",
    )

    if log_file is not None:
        logger.add(
            log_file,
            level=level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
            rotation="50 MB",
            retention=2,
            compression="zip",
        )

    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)
    logging.captureWarnings(capture=True)
