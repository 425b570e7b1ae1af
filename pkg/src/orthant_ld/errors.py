"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class ArtifactError(Exception):
    exit_code = 1


class ParseError(ArtifactError):
    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelError(ArtifactError):
    exit_code = 4


class NegativeCoordinate(ModelError, ValueError):
    pass


class SameState(ModelError, ValueError):
    pass


class RangeViolation(ModelError):
    pass


class NotIrreducible(ArtifactError):
    exit_code = 5


class SizeOverflow(ArtifactError):
    exit_code = 6


class NoConvergence(ArtifactError):
    exit_code = 7


class OracleFailure(ArtifactError):
    exit_code = 8


class TubeExceedsTruncation(ArtifactError):
    exit_code = 9


class RateExplosion(ArtifactError):
    exit_code = 10


class SamplerFailure(ArtifactError):
    exit_code = 11
