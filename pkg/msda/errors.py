"""
Errors module - exception types shared by the library and the CLI.
"""


class MSDAError(Exception):
    """Base class. `exit_code` is what the CLI returns when it sees one."""

    exit_code = 1


class DataError(MSDAError):
    """Bad input: unreadable file, malformed cell, class sizes, shapes."""

    exit_code = 2


class ModelFileError(DataError):
    """Model file is malformed, truncated or of another schema version."""


class MemoryBudgetError(MSDAError):
    exit_code = 2


class ConvergenceError(MSDAError):
    exit_code = 3
