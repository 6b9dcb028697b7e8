"""Exception hierarchy.

Input problems derive from ``InputError`` (CLI exit code 2); backend
configuration problems derive from ``BackendConfigError`` (exit code 3).
"""


class PhqScreenError(Exception):
    pass


class InputError(PhqScreenError):
    pass


# transcript ingest
class EmptyFile(InputError):
    pass


class MalformedRow(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownSpeaker(MalformedRow):
    pass


class InconsistentLabel(InputError):
    pass


class MissingLabel(InputError):
    pass


class OverlappingSplits(InputError):
    pass


# knowledge / prompts
class UnknownPreset(InputError):
    pass


class MissingDocument(InputError):
    pass


class TemplateError(InputError):
    pass


class TokenBudgetExceeded(InputError):
    pass


class ScoreOutOfRange(InputError):
    pass


class ConfigError(InputError):
    pass


# metrics
class ThresholdOutOfRange(InputError):
    pass


class EmptyInput(InputError):
    pass


class DegenerateClasses(InputError):
    pass


class InsufficientData(InputError):
    pass


# backend
class BackendError(PhqScreenError):
    pass


class BackendTimeout(BackendError):
    pass


class TransportError(BackendError):
    pass


class ProtocolError(BackendError):
    pass


class BackendConfigError(BackendError):
    pass


class AuthError(BackendConfigError):
    pass


class DuplicateFingerprint(BackendError):
    pass
