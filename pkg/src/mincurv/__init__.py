"""Arrival-time value function of minimum curvature flow on compact bodies."""

import os

# The TBB build shipped with many distributions is too old for numba and
# triggers a warning on every parallel call.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
