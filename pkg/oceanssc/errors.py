"""
Exception types raised across oceanssc.

The CLI maps these onto exit codes: input problems (shape, config, format)
exit with 1, failed numerical checks exit with 2.
"""


class OceanError(Exception):
    """Base class for every error raised by oceanssc."""


class ShapeError(OceanError, ValueError):
    """Array dimensions disagree or violate a divisibility requirement."""


class ConfigError(OceanError, ValueError):
    """Configuration document is invalid or internally inconsistent."""


class FormatError(OceanError, ValueError):
    """A binary volume, tensor container or PGM file is malformed."""


class NumericalCheckError(OceanError, RuntimeError):
    """An oracle comparison or finite-difference check exceeded its bound."""


class DivergenceError(NumericalCheckError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"Non-finite total loss {value!r} at step {step}")
