"""impactlab: response functions and trade-sign correlators on a one-second
grid, sector-level aggregation, power-law fits, and a seed-deterministic
synthetic market for validating every estimator.

Submodules are loaded lazily so the command-line entry point can pin BLAS
thread counts before numpy is first imported (reproducibility across
worker counts depends on it).
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "aggregation",
    "cli",
    "errors",
    "estimators",
    "fitting",
    "grids",
    "pipeline",
    "signing",
    "store",
    "synth",
    "taq_ingest",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
