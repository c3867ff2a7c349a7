"""Exception hierarchy shared by every module.

Input problems derive from :class:`InputError`, numerical problems from
:class:`ComputeError`; the CLI maps the two families to exit codes 2 and 3.
"""


class ULHMError(Exception):
    """Base class for all package errors."""


class InputError(ULHMError):
    pass


class ComputeError(ULHMError):
    pass


class FormatError(InputError):
    pass


class DataError(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"{message} (row={row})")
        self.row = row


class EmptyError(InputError):
    pass


class DimensionError(InputError):
    pass


class ManifestError(InputError):
    pass


class PairError(InputError):
    pass


class IoError(InputError, OSError):
    pass


class IncompleteBundleError(InputError):
    pass


class DegenerateError(ComputeError):
    pass


class ConfigError(ComputeError):
    pass


class TrainingDivergedError(ComputeError):
    pass
