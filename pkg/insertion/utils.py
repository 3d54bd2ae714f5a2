"""
Shared utilities for the insertion simulator
Logging setup, environment configuration and small helpers used across modules
"""

import os
import logging
import hashlib
from typing import Any, Dict
from functools import wraps

import numpy as np

from .errors import InsertionError

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# Logging Configuration
def setup_logging(service_name: str = "insertion", level: str = "INFO") -> logging.Logger:
    """Setup logging for the package (or one of its entry points)"""
    logger = logging.getLogger(service_name)
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    # Re-running the CLI inside one interpreter must not duplicate output
    if not any(getattr(h, "_insertion_handler", False) for h in logger.handlers):
        formatter = logging.Formatter(LOG_FORMAT)
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        console_handler._insertion_handler = True
        logger.addHandler(console_handler)

    return logger


# Configuration
def get_config() -> Dict[str, Any]:
    """Get configuration from environment variables"""
    return {
        "log_level": os.getenv("INSERTION_LOG_LEVEL", "INFO"),
        "database_url": os.getenv("INSERTION_DATABASE_URL", "sqlite:///./insertion_results.db"),
        "out_dir": os.getenv("INSERTION_OUT_DIR", "./results"),
        "seed": int(os.getenv("INSERTION_SEED", "0")),
    }


# Error Handling
def handle_exceptions(func):
    """Log unexpected exceptions raised by a CLI command and re-raise them wrapped"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except InsertionError:
            raise
        except Exception as e:
            logger = logging.getLogger(func.__module__)
            logger.error(f"Unexpected error in {func.__name__}: {str(e)}")
            raise InsertionError(f"{func.__name__} failed: {e}") from e
    return wrapper


# Numeric helpers
def wrap_angle(angle):
    """Wrap angles (scalar or array) into (-pi, pi]"""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def array_digest(*arrays: np.ndarray) -> str:
    """Stable sha256 over float64 array contents"""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


def mean_std(values) -> tuple:
    """Population mean and std; (0, 0) for an empty sequence"""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    return float(arr.mean()), float(arr.std())
