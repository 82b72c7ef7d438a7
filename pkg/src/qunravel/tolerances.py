"""Numerical tolerances shared by all modules.

Values can be overridden globally with :func:`set_tolerances` (the CLI does
this from the ``[tolerances]`` config section).
"""
from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-10
    psd: float = 1e-9
    flow: float = 1e-8
    trace: float = 1e-9
    norm: float = 1e-8
    orthonormal: float = 1e-10
    povm: float = 1e-9


_current = Tolerances()


def get_tolerances():
    return _current


def set_tolerances(**overrides):
    """Replace selected tolerances; returns the previous set."""
    global _current
    known = {f.name for f in fields(Tolerances)}
    unknown = set(overrides) - known
    if unknown:
        raise KeyError(f"unknown tolerance(s): {sorted(unknown)}")
    previous = _current
    _current = replace(_current, **{k: float(v) for k, v in overrides.items()})
    return previous
