"""Exception hierarchy shared across the package.

Each class carries the process exit code used by the CLI so that shell
pipelines can distinguish bad configs from bad data from unfittable models.
"""


class OmmcastError(Exception):
    """Base class; exit code 1."""

    exit_code = 1


class ValidationError(OmmcastError):
    """Bad configuration or arguments; exit code 2."""

    exit_code = 2


class DataError(OmmcastError):
    """Malformed or insufficient input data; exit code 3."""

    exit_code = 3


class ModelError(OmmcastError):
    """A model cannot be fit or applied; exit code 4."""

    exit_code = 4
