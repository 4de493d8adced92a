"""Exception hierarchy shared by every module.

Each class carries an ``exit_code`` so the command line front end can map
failures onto its documented status codes without a lookup table.
"""


class NL2CodeError(Exception):
    exit_code = 1
    kind = "error"


class ConfigurationError(NL2CodeError, ValueError):
    exit_code = 2
    kind = "config"


class UsageError(NL2CodeError, ValueError):
    exit_code = 2
    kind = "usage"


class DimensionError(NL2CodeError, ValueError):
    exit_code = 2
    kind = "dimension"


class DataError(NL2CodeError, ValueError):
    exit_code = 3
    kind = "data"


class ParseError(DataError):
    kind = "parse"

    def __init__(self, message, *, byte_offset=None, line=None):
        super().__init__(message)
        self.byte_offset = byte_offset
        self.line = line


class SchemaError(DataError):
    kind = "schema"


class ProvenanceError(DataError):
    kind = "provenance"


class VocabularyError(DataError):
    kind = "vocabulary"


class LengthError(DataError):
    kind = "length"


class CorruptionError(DataError):
    kind = "corruption"


class IncompatibleVersionError(DataError):
    kind = "version"


class EnvironmentProblem(NL2CodeError, OSError):
    exit_code = 4
    kind = "environment"


class NumericalError(NL2CodeError, ArithmeticError):
    exit_code = 5
    kind = "numerical"

    def __init__(self, message, *, parameter=None, checkpoint=None):
        super().__init__(message)
        self.parameter = parameter
        self.checkpoint = checkpoint
