import logging
import sys
from pathlib import Path

from .config import LogConfig

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(threadName)s - %(command)s - %(message)s"


class CommandFilter(logging.Filter):
    """Stamps every record with the lab command, so appended runs stay apart in one file."""

    def __init__(self, command: str) -> None:
        super().__init__()
        self.command = command

    def filter(self, record: logging.LogRecord) -> bool:
        record.command = self.command
        return True


def setup_logging(config: LogConfig, command: str = "-") -> None:
    """
    Route lab logging to the configured file and console.

    Args:
        config: LogConfig object containing settings.
        command: Subcommand name written into every line.

    Note:
        The file handler appends and creates missing parents. The console handler writes
        to stderr; stdout is reserved for the [OK]/[FAIL] status lines. warnings.warn()
        output goes through the "py.warnings" logger.
    """
    level = getattr(logging, config.level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers:
        if any(isinstance(f, CommandFilter) for f in handler.filters):
            handler.close()
    root_logger.handlers.clear()

    formatter = logging.Formatter(LOG_FORMAT)
    stamp = CommandFilter(command)
    handlers: list[logging.Handler] = []

    if config.file:
        log_path = Path(config.file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, mode="a", encoding="utf-8"))
    if config.console:
        handlers.append(logging.StreamHandler(sys.stderr))

    for handler in handlers:
        handler.setLevel(level)
        handler.setFormatter(formatter)
        handler.addFilter(stamp)
        root_logger.addHandler(handler)

    logging.captureWarnings(True)
