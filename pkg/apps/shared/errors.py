"""Exception hierarchy shared by the numerical packages and the CLI.

Library code raises these; only :mod:`apps.harness.cli` turns them into exit codes.
"""

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING_ABORT = 3


class IpviError(Exception):
    exit_code = EXIT_USAGE


class ContractError(IpviError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    pass


class DomainError(IpviError):
    pass


class NotPositiveDefiniteError(IpviError):
    pass


class SingularError(IpviError):
    pass


class TapeError(ContractError):
    pass


class ConfigError(IpviError):
    pass


class DataError(IpviError):
    exit_code = EXIT_DATA

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        location = ""
        if row is not None:
            location = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + location)
        self.row = row
        self.col = col


class CheckpointFormatError(IpviError):
    exit_code = EXIT_DATA


class CheckpointIntegrityError(IpviError):
    exit_code = EXIT_DATA


class TrainingAbort(IpviError):
    exit_code = EXIT_TRAINING_ABORT

    def __init__(self, message: str, record: dict[str, Any]):
        super().__init__(message)
        self.record = record
