"""Input validation and canonical-number helpers."""
import math
import re
from typing import List, Optional, Sequence, Tuple

from src.utils.errors import ConfigError, DataError

SIGNIFICANT_DIGITS = 6

_VARIANT_NAME = re.compile(r"^[a-z][a-z0-9_]{0,31}$")


def validate_variant_name(name: str) -> bool:
    """Validate a cleansing-variant name.

    Variant names become file-name components, so they are restricted to
    lowercase identifiers.

    Args:
        name: Variant name

    Returns:
        True if valid
    """
    return bool(_VARIANT_NAME.match(name))


def require_same_dimension(
    vectors: Sequence[Sequence[float]],
    what: str = "vector"
) -> int:
    """Return the shared dimension of ``vectors``.

    Args:
        vectors: Non-empty sequence of vectors
        what: Name used in the error message

    Returns:
        The common dimension

    Raises:
        DataError: If vectors is empty or dimensions differ
    """
    if len(vectors) == 0:
        raise DataError(f"no {what}s given")
    dim = len(vectors[0])
    for i, v in enumerate(vectors):
        if len(v) != dim:
            raise DataError(
                f"{what} {i} has dimension {len(v)}, expected {dim}"
            )
    return dim


def round_sig(value: float, digits: int = SIGNIFICANT_DIGITS) -> float:
    """Round to a fixed number of significant digits.

    Args:
        value: Finite real
        digits: Significant digits

    Returns:
        The rounded value, stable under repeated rounding
    """
    if value == 0.0:
        return 0.0
    if not math.isfinite(value):
        return value
    rounded = float(f"{value:.{digits}g}")
    # normalize negative zero so files stay byte-stable
    return rounded + 0.0


def parse_grid(text: str) -> List[float]:
    """Parse a ``start:stop:step`` threshold grid (stop inclusive).

    Args:
        text: Grid, e.g. ``1.0:5.0:0.05``

    Returns:
        Strictly ascending thresholds

    Raises:
        ConfigError: On malformed input
    """
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as e:
        raise ConfigError(f"grid must be numeric, got {text!r}") from e
    if step <= 0 or stop < start:
        raise ConfigError(f"grid needs step > 0 and stop >= start, got {text!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round_sig(start + i * step) for i in range(count)]


def parse_bounds(text: str) -> Tuple[float, float]:
    """Parse a ``low:high`` interval.

    Args:
        text: Interval, e.g. ``1:7``

    Returns:
        Tuple of (low, high)

    Raises:
        ConfigError: On malformed input or low >= high
    """
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"bounds must be low:high, got {text!r}")
    try:
        low, high = float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ConfigError(f"bounds must be numeric, got {text!r}") from e
    if not low < high:
        raise ConfigError(f"bounds need low < high, got {text!r}")
    return low, high


def parse_variant_list(text: Optional[str]) -> List[str]:
    """Parse a comma-separated variant list, keeping order.

    Args:
        text: e.g. ``identity,denoise,restore``

    Returns:
        Variant names without duplicates
    """
    if not text:
        return ["identity"]
    names: List[str] = []
    for raw in text.split(","):
        name = raw.strip()
        if not name:
            continue
        if not validate_variant_name(name):
            raise ConfigError(f"invalid variant name: {name!r}")
        if name not in names:
            names.append(name)
    return names
