"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation / contract
problems exit 1, numeric divergence exits 2, file and format problems
exit 3.
"""


class IpaeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(IpaeError):
    """Array dimensions are inconsistent with an operation's contract."""


class ContractError(IpaeError):
    """A precondition on arguments or state was violated."""


class ConfigError(IpaeError):
    """An experiment config failed validation; message names the field."""


class NumericError(IpaeError):
    """A computation produced non-finite values."""


class FormatError(IpaeError):
    """A file does not conform to its expected on-disk format."""


class TrainingDiverged(NumericError):
    """Training aborted on a non-finite loss.

    Carries the failing step and the last parameter snapshot taken at a
    logging boundary so callers can persist it.
    """

    def __init__(self, step: int, last_good=None, rows=None):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good
        self.rows = rows if rows is not None else []
