from __future__ import annotations

from collections.abc import Callable
from collections.abc import Generator
from collections.abc import Iterable
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
import itertools
import logging
import math
from typing import Any
from typing import TypeVar

import numpy as np
import numpy.typing as npt
from scipy.stats import rankdata

from otward import config
from otward.errors import DegenerateInput
from otward.errors import DimensionMismatch


logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def to_ranking(data: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """1-based average ranks; tied values share the mean of their positions."""
    return rankdata(np.asarray(data, dtype=np.float64).reshape(-1), method="average")


def spearman(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    xs = np.asarray(x, dtype=np.float64).reshape(-1)
    ys = np.asarray(y, dtype=np.float64).reshape(-1)
    if xs.shape != ys.shape:
        raise DimensionMismatch(f"vectors of length {xs.size} and {ys.size}")
    if xs.size < 2:
        raise DegenerateInput("Spearman correlation needs at least two pairs")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise DegenerateInput("Spearman correlation is undefined for a constant vector")
    rx = to_ranking(xs)
    ry = to_ranking(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(rx @ ry / math.sqrt(float(rx @ rx) * float(ry @ ry)))


def fsum_mean(values: Iterable[float]) -> float:
    """Order-independent mean via compensated summation."""
    items = list(values)
    if not items:
        return math.nan
    return math.fsum(items) / len(items)


def product_dict(axes: dict[str, Sequence[Any]]) -> Generator[dict[str, Any], None, None]:
    """Grid cells over named axes; the last axis varies fastest."""
    names = list(axes)
    for values in itertools.product(*(axes[name] for name in names)):
        yield dict(zip(names, values))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int | None = None) -> list[R]:
    """Ordered map over independent cells; thread count from ``OTWARD_THREADS``."""
    workers = config.num_threads() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug("mapping %d cells over %d threads", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def format_value(value: Any) -> str:
    """Text form used in tables: shortest round-trip repr for floats, lower-case bools."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def format_scalar(value: float) -> str:
    """Console form of a scalar result, 12 significant digits."""
    return f"{value:.12g}"
