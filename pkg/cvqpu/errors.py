# cvqpu/errors.py
from typing import Any, Optional


class ConfigError(ValueError):
    """
    Bad configuration input. Carries the offending key and, when known,
    the 1-based line number in the config file.
    """
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class RegimeError(RuntimeError):
    """Raised by callers that refuse to run outside a validated regime."""
    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """Integrator step-limit exhaustion or a truncation study that never settles."""


class SingularModelError(ZeroDivisionError):
    """An effective model or calibration that divides by a vanishing detuning or rate."""
