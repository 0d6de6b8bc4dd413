"""Input checks shared by the estimator front ends."""
from __future__ import annotations

import math
import os
from numbers import Real

from .trace import EventTrace, NetworkEvent, load_trace


def check_trace(X) -> EventTrace:
    """Coerce ``X`` to an :class:`EventTrace`.

    Accepts a trace, a sequence of :class:`NetworkEvent`, or a path to a trace
    file.  Ordering and id uniqueness are validated either way.
    """
    if isinstance(X, EventTrace):
        return X
    if isinstance(X, (str, os.PathLike)):
        with open(X, encoding="utf-8") as fh:
            return load_trace(fh)
    try:
        events = tuple(X)
    except TypeError:
        raise TypeError(f"expected an EventTrace or events, got {type(X).__name__}") from None
    for ev in events:
        if not isinstance(ev, NetworkEvent):
            raise TypeError(f"expected NetworkEvent, got {type(ev).__name__}")
    return EventTrace(events)


def check_positive(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, Real) or not math.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)
