"""Error types shared across the package."""


class CapacityError(ValueError):
    """Problem size exceeds a documented hard cap of the chosen backend."""


class SingularFrequencyError(ValueError):
    """A frequency-domain linear solve hit a (near-)singular matrix.

    Carries the offending frequency so callers can report which grid point
    failed rather than a bare linear-algebra traceback.
    """

    def __init__(self, omega, detail=""):
        self.omega = omega
        msg = f"singular Green-function solve at omega = {omega:.6g}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class ConfigError(ValueError):
    """Invalid experiment configuration.

    Carries the dotted path of the offending field so the CLI can point at
    the exact line of the config rather than an engine traceback.
    """

    def __init__(self, field, detail):
        self.field = field
        super().__init__(f"config field '{field}': {detail}")
