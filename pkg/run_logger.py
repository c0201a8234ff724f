"""
run_logger.py - Centralized logging configuration for the SPI toolkit

Sets up Python logging with:
- File handler: logs/YYYY-MM-DD/run.txt (daily folder)
- Console handler: stdout
- Configurable log level via LOG_LEVEL env variable
- Sanitization of free text (paths, exception messages) before it is logged
"""

import logging
import time
from datetime import datetime
from pathlib import Path

from config.settings import LOG_DIR, LOG_LEVEL

LOGGER_NAME = "spi_bcnn"


def sanitize_log_string(text: str) -> str:
    """
    Sanitize string for logging to prevent log injection.
    Removes newlines, carriage returns, and other control characters.

    Args:
        text: String to sanitize

    Returns:
        Sanitized string safe for logging
    """
    if not text:
        return text
    text = text.replace('\n', ' ').replace('\r', ' ').replace('\t', ' ')
    return ''.join(char if ord(char) >= 32 else ' ' for char in text)


class MillisecondFormatter(logging.Formatter):
    """Formatter that appends milliseconds to the configured datefmt."""

    def formatTime(self, record, datefmt=None):
        if not datefmt:
            return super().formatTime(record, datefmt)
        ct = self.converter(record.created)
        ms = int((record.created - int(record.created)) * 1000)
        return f"{time.strftime(datefmt, ct)}.{ms:03d}"


def setup_logger(name: str = LOGGER_NAME, log_level: str = "INFO", log_dir: str = LOG_DIR) -> logging.Logger:
    """
    Configure and return a logger with file and console handlers.

    Args:
        name: Logger name
        log_level: Log level string (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Root folder for the dated log subfolders

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # Prevent duplicate handlers if setup is called multiple times
    if logger.handlers:
        return logger

    formatter = MillisecondFormatter(
        fmt="[%(asctime)s] [%(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # ─── File Handler (daily folder) ───
    today = datetime.now().strftime("%Y-%m-%d")
    folder = Path(log_dir) / today
    folder.mkdir(parents=True, exist_ok=True)

    file_handler = logging.FileHandler(folder / "run.txt", encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    # ─── Console Handler ───
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, log_level.upper(), logging.INFO))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    return logger


def get_logger(name: str = LOGGER_NAME) -> logging.Logger:
    """
    Get the configured logger instance.
    If logger doesn't exist, create it with the LOG_LEVEL setting.
    """
    logger = logging.getLogger(name)
    if not logger.handlers:
        setup_logger(name, LOG_LEVEL)
    return logger
