"""Exception taxonomy.

Every error raised on purpose by the library derives from
:class:`OrthoforgeError` and carries the process exit code the CLI uses.
"""


class OrthoforgeError(Exception):
    category = 'error'
    exit_code = 1


class UsageError(OrthoforgeError):
    category = 'usage'
    exit_code = 2


class ArtifactIOError(OrthoforgeError):
    category = 'io'
    exit_code = 3


class TruncatedBodyError(ArtifactIOError):
    def __init__(self, message: str, expected: int, actual: int):
        super().__init__(f'{message}: expected {expected} bytes, got {actual}')
        self.expected = expected
        self.actual = actual


class FormatError(OrthoforgeError):
    category = 'format'
    exit_code = 4


class PlyParseError(FormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f'line {line}: {message}')
        self.line = line


class SchemaError(FormatError):
    category = 'schema'


class ConfigError(FormatError):
    category = 'config'


class DegenerateGeometryError(OrthoforgeError):
    category = 'degenerate-geometry'
    exit_code = 5


class NoPlaneError(DegenerateGeometryError):
    category = 'no-plane'


class DomainError(OrthoforgeError):
    category = 'domain'
    exit_code = 6


class NormalizationError(DomainError):
    category = 'normalization'
