"""Exception hierarchy.

Precondition violations raise plain ``ValueError``; everything else derives
from :class:`MragError` so callers can catch pipeline failures in one place.
"""


class MragError(Exception):
    pass


class MalformedChoice(MragError):
    pass


class BackendError(MragError):
    pass


class BackendUnreachable(BackendError):
    pass


class BackendRefused(BackendError):
    def __init__(self, message: str, status_code: int | None = None) -> None:
        super().__init__(message)
        self.status_code = status_code


class FixtureMiss(BackendError):
    pass


class ParseFailed(MragError):
    pass


class KeyMissing(ParseFailed):
    pass


class ValueNotString(ParseFailed):
    pass


class ScoreOutOfRange(ParseFailed):
    pass


class DecompositionFailed(MragError):
    pass


class JudgeFailed(MragError):
    pass


class RewriteFailed(MragError):
    pass


class MisalignedScores(MragError):
    pass


class ConfigError(MragError):
    pass
