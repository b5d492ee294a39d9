import logging
import os
from pathlib import Path

LOG_ENV_VAR = 'AUGFOREST_LOG'

LOG_LEVELS = {
    'error': logging.ERROR,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}

_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def resolve_log_level(verbose: bool = False) -> int:
    if verbose:
        return logging.DEBUG
    name = os.environ.get(LOG_ENV_VAR)
    if not name:
        return logging.INFO
    level = LOG_LEVELS.get(name.strip().lower())
    if level is None:
        logging.warning(f"Invalid {LOG_ENV_VAR} value {name!r}, falling back to info")
        return logging.INFO
    return level


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=resolve_log_level(verbose), format=_FORMAT)


def attach_run_log(run_dir: Path) -> logging.Handler:
    """Mirror all log records into <run_dir>/logs/run.log for the rest of the run."""
    log_dir = run_dir / 'logs'
    log_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(log_dir / 'run.log', mode='w')
    handler.setFormatter(logging.Formatter(_FORMAT))
    root = logging.getLogger()
    handler.setLevel(root.level)
    root.addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    logging.getLogger().removeHandler(handler)
    handler.close()
