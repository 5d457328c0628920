"""Error taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericsError -> 4.
"""


class LdmrecError(Exception):
    """Base class for all package errors."""


class ConfigError(LdmrecError):
    """Invalid configuration value, unknown key, or incompatible shapes."""


class DataError(LdmrecError):
    """Malformed input file, empty dataset, or inconsistent artifacts."""


class DimensionError(LdmrecError):
    """Operand shapes incompatible with the requested operation."""


class TapeError(LdmrecError):
    """Gradient tape misuse (e.g. a second backward on a consumed tape)."""


class NumericsError(LdmrecError):
    """Non-finite values produced where finiteness is an invariant."""
