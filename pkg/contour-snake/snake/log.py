"""
Logging setup shared by the CLI and long training runs
"""
import os
import logging
from logging.handlers import RotatingFileHandler

logger = logging.getLogger('snake')


def configure_logging(cfg):
    """Attach rotating file + console handlers to the package logger"""
    level = getattr(logging, str(cfg.LOG_LEVEL).upper(), logging.INFO)

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if cfg.LOG_TO_FILE:
        log_dir = os.path.dirname(cfg.LOG_FILE)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)

        # File handler with rotation
        file_handler = RotatingFileHandler(
            cfg.LOG_FILE,
            maxBytes=cfg.LOG_MAX_SIZE,
            backupCount=cfg.LOG_BACKUP_COUNT
        )
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'
        ))
        file_handler.setLevel(level)
        logger.addHandler(file_handler)

    # Console handler goes to stderr so stdout stays machine readable
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    logger.addHandler(console_handler)

    logger.setLevel(level)
    logger.propagate = False
    return logger
