import logging
import os
import datetime
from pathlib import Path

# Format: timestamp - level - component - message
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'

# File logging is enabled by SURFNS_LOG_DIR or configure_log_dir()
_log_dir = os.environ.get("SURFNS_LOG_DIR")


def configure_log_dir(log_dir):
    """Route file logs of every component logger to log_dir."""
    global _log_dir
    _log_dir = log_dir
    for name in list(logging.root.manager.loggerDict):
        logger = logging.getLogger(name)
        if getattr(logger, "_surfns_configured", False):
            _attach_file_handler(logger, name, logging.DEBUG)


def _attach_file_handler(logger, component_name, file_level):
    if not _log_dir or any(isinstance(h, logging.FileHandler) for h in logger.handlers):
        return None
    Path(_log_dir).mkdir(parents=True, exist_ok=True)
    # Create unique log file name with timestamp
    timestamp = datetime.datetime.now().strftime('%Y%m%d_%H%M%S')
    log_file = os.path.join(_log_dir, f"{component_name.replace(':', '_')}_{timestamp}.log")
    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(file_level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(file_handler)
    return log_file


def setup_logger(component_name, console_level=logging.WARNING, file_level=logging.DEBUG):
    """
    Set up a logger with a console handler and, when a log directory is
    configured, a file handler.

    Args:
        component_name: Name of the component (e.g., 'geometry', 'nssolver')
        console_level: Logging level for console output
        file_level: Logging level for file output

    Returns:
        A configured logger (the same instance on repeated calls)
    """
    logger = logging.getLogger(component_name)
    if getattr(logger, "_surfns_configured", False):
        return logger
    logger.setLevel(min(console_level, file_level))  # Set to the more verbose level

    # Create console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console_handler)

    log_file = _attach_file_handler(logger, component_name, file_level)
    logger._surfns_configured = True
    if log_file:
        logger.debug(f"Logger initialized. Log file: {log_file}")
    return logger


def set_console_level(level):
    """Change the console level of every component logger."""
    for name in list(logging.root.manager.loggerDict):
        logger = logging.getLogger(name)
        if getattr(logger, "_surfns_configured", False):
            for handler in logger.handlers:
                if not isinstance(handler, logging.FileHandler):
                    handler.setLevel(level)
