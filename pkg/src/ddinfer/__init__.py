"""Data-driven inference of structural response from empirical material data."""

import os as _os

# the default TBB layer is not installed; fall back quietly
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
