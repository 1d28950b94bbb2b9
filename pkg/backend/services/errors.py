"""Exception hierarchy shared by every pipeline stage.

Each class carries the process exit code used by the CLI. Context (channel,
subject, cell, ...) is attached while an error travels up through the loops
that produced it, so the type is never lost.
"""
from typing import Any, Dict


def _restore(cls: type, message: str, context: Dict[str, Any]) -> "PipelineError":
    return cls(message, **context)


class PipelineError(Exception):
    exit_code = 3

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def add_context(self, **context: Any) -> "PipelineError":
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"

    def __reduce__(self):
        return _restore, (type(self), self.message, self.context)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "context": {k: str(v) for k, v in self.context.items()},
            "exit_code": self.exit_code,
        }


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class NumericError(PipelineError):
    exit_code = 4


class InvalidBand(ConfigError):
    pass


class SignalTooShort(DataError):
    pass


class InsufficientData(DataError):
    pass


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class ArityMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnknownChannel(DataError):
    pass


class TooFewSubjects(DataError):
    pass


class TooFewInstances(DataError):
    pass


class SingleClassTraining(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class EmptyConfusion(DataError):
    pass


class InvalidDistribution(DataError):
    pass


class MissingCorrelation(DataError):
    pass


class DegenerateSignal(NumericError):
    pass


class NumericalInstability(NumericError):
    pass
