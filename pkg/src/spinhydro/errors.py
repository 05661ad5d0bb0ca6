class SpinHydroError(Exception):
    """Base class for all package errors."""


class GridError(SpinHydroError, ValueError):
    pass


class StateError(SpinHydroError, ValueError):
    """Initial state rejected by the resolution or boundary-leakage guard."""


class StepGuardError(SpinHydroError, ValueError):
    """Time step violates a propagation guard, or the field is not finite."""


class LeakageError(SpinHydroError, RuntimeError):
    """Probability reached the periodic boundary band."""


class SpinError(SpinHydroError, ValueError):
    pass


class AnchorError(SpinHydroError, RuntimeError):
    """Phase reconstruction is path-inconsistent or cannot be anchored."""


class NodalTrapError(SpinHydroError, RuntimeError):
    def __init__(self, message, time=None, position=None):
        super().__init__(message)
        self.time = time
        self.position = position


class EnsembleError(SpinHydroError, RuntimeError):
    pass


class ConfigError(SpinHydroError, ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line
