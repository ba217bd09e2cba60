"""Variational Monte Carlo with a sorting-based antisymmetric ansatz.

Submodules load lazily so the command-line front end can pin BLAS thread
counts through the environment before numpy comes in.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "ElectronConfiguration": "geometry",
    "SystemSpec": "geometry",
    "exchange_path": "geometry",
    "h4_rectangle": "geometry",
    "load_system": "geometry",
    "transpose_electrons": "geometry",
    "SortletWavefunction": "ansatz",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
