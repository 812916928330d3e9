"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so new error types should subclass one
of the four families below rather than ``Exception`` directly.
"""


class HarvestcastError(Exception):
    """Base class for all package errors."""


class InputError(HarvestcastError, ValueError):
    """Malformed input: bad shapes, broken files, violated preconditions."""


class DimensionError(InputError):
    pass


class ContractError(InputError):
    pass


class FormatError(InputError):
    pass


class IntegrityError(FormatError):
    """File structure is readable but its length or payload is inconsistent."""


class OutOfBoundsError(InputError):
    pass


class SampleTableError(InputError):
    """Row-addressed parse failures; ``errors`` holds ``(line, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.errors[:10])
        more = "" if len(self.errors) <= 10 else f" (+{len(self.errors) - 10} more)"
        super().__init__(f"{len(self.errors)} bad row(s): {lines}{more}")


class NumericError(HarvestcastError, ArithmeticError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, message, epoch, batch, net=None):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch
        self.net = net


class MissingDataError(HarvestcastError, LookupError):
    pass


class AssemblyError(MissingDataError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        super().__init__("missing source data: " + ", ".join(self.gaps))


EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4
