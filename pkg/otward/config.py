from __future__ import annotations

import logging
import os
import warnings


logger = logging.getLogger(__name__)

THREADS_ENV = "OTWARD_THREADS"

# Sinkhorn
DEFAULT_EPS_REG = 0.1
DEFAULT_MAX_ITER = 2000
DEFAULT_TOL = 1e-6

# diagnostics
DEFAULT_TOP_K = 10

# contamination
RANK1_AMPLITUDE = 5.0
FULL_RANK_REFERENCE_EPS = 0.2
RANK1_REPORT_EPS = 0.05
CONTAMINATION_GRID = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2)

# bound checks
THEOREM1_EPS_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
THEOREM1_C0_GRID = (1.0, 2.0, 5.0, 10.0)
THEOREM1_DIMS = (8, 32, 128)

SWEEP_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)

# adapter training
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_MARGIN = 1.0
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 50
DEFAULT_STEPS_PER_EPOCH = 8

ADAPTER_FILENAME = "adapter.otad"


def num_threads(default: int = 1) -> int:
    """Worker count from ``OTWARD_THREADS``; falls back to ``default`` on bad values."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        warnings.warn(f"Ignoring {THREADS_ENV}={raw!r}: not an integer.")
        return default
    if value < 1:
        warnings.warn(f"Ignoring {THREADS_ENV}={value}: must be positive.")
        return default
    return value


def apply_thread_limit() -> int:
    """Cap torch intra-op parallelism at ``OTWARD_THREADS`` and return the cap."""
    import torch

    threads = num_threads(default=torch.get_num_threads())
    torch.set_num_threads(threads)
    logger.debug("using %d threads", threads)
    return threads
