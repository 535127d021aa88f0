"""
Error hierarchy for the pathology benchmark.

Every failure raised by the toolkit derives from ToolkitError and carries the
CLI exit code it maps to.
"""

from typing import List, Optional, Sequence

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_COMPUTATION = 3


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code: int = EXIT_COMPUTATION


# Data model


class MalformedDirection(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, value: str):
        super().__init__(f"malformed direction {value!r}, expected <lang>_<Script>-<lang>_<Script>")
        self.value = value


class MarkupError(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnbalancedMarkup(MarkupError):
    pass


class NestedMarkup(MarkupError):
    pass


class EmptySpan(MarkupError):
    pass


class IoError(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot read {path}: {reason}")
        self.path = path


class SchemaError(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, line: int, field: str, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(f"line {line}: schema error at {field}{detail}")
        self.line = line
        self.field = field


class ValidationError(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, record_id: str, violations: Sequence[str]):
        super().__init__(f"record {record_id}: " + "; ".join(violations))
        self.record_id = record_id
        self.violations = list(violations)


class CorpusValidationError(ValidationError):
    """Raised by load_corpus with every failing record."""

    def __init__(self, failures: List[ValidationError]):
        ids = ", ".join(f.record_id for f in failures[:5])
        more = f" (+{len(failures) - 5} more)" if len(failures) > 5 else ""
        ToolkitError.__init__(self, f"{len(failures)} invalid record(s): {ids}{more}")
        self.record_id = failures[0].record_id
        self.violations = [v for f in failures for v in f.violations]
        self.failures = failures


class DuplicateRecordId(ToolkitError):
    exit_code = EXIT_VALIDATION

    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id {record_id!r}")
        self.record_id = record_id


# Detectors


class MissingInput(ToolkitError):
    def __init__(self, detector: str, field: str, record_id: Optional[str] = None):
        where = f" for record {record_id}" if record_id else ""
        super().__init__(f"{detector}: missing input {field}{where}")
        self.detector = detector
        self.field = field
        self.record_id = record_id


class ZeroVector(ToolkitError):
    def __init__(self, encoder: str):
        super().__init__(f"{encoder}: zero embedding vector, similarity undefined")
        self.encoder = encoder


class UsageError(ToolkitError):
    """Bad command-line combination detected after argument parsing."""

    exit_code = EXIT_USAGE


class UnknownDetector(ToolkitError):
    exit_code = EXIT_USAGE

    def __init__(self, name: str):
        super().__init__(f"unknown detector {name!r}")
        self.name = name


class DegenerateMass(ToolkitError):
    pass


class EmptyReferenceSet(ToolkitError):
    def __init__(self, direction: str):
        super().__init__(f"no reference distributions survive filtering for {direction}")
        self.direction = direction


class InsufficientCalibrationData(ToolkitError):
    pass


class DegenerateCalibration(InsufficientCalibrationData):
    pass


# Combiner


class TooFewGroups(ToolkitError):
    pass


class NonBinaryLabels(ToolkitError):
    pass


class ConstantFeature(ToolkitError):
    def __init__(self, feature: str):
        super().__init__(f"feature {feature!r} is constant on the training rows")
        self.feature = feature


class DidNotConverge(ToolkitError):
    def __init__(self, grad_norm: float, iterations: int):
        super().__init__(f"no convergence after {iterations} iterations, gradient norm {grad_norm:.3e}")
        self.grad_norm = grad_norm
        self.iterations = iterations


class MissingFeature(ToolkitError):
    def __init__(self, rows: Sequence[object]):
        shown = ", ".join(map(str, list(rows)[:5]))
        super().__init__(f"{len(rows)} row(s) lack a selected feature or label: {shown}")
        self.rows = list(rows)


# Evaluation and selection


class EmptyTask(ToolkitError):
    pass


class DegenerateLabels(ToolkitError):
    pass


class NoEvaluableDirections(ToolkitError):
    pass


class MissingScores(ToolkitError):
    pass


class ScoreTableMismatch(ToolkitError):
    """A score table built for another level or side than the task."""

    exit_code = EXIT_VALIDATION


class NotEnoughRecords(ToolkitError):
    def __init__(self, requested: int, available: int):
        super().__init__(f"requested {requested} records, only {available} available")
        self.requested = requested
        self.available = available


# Synthetic data and configuration


class InvalidSpec(ToolkitError):
    exit_code = EXIT_VALIDATION


class InvalidConfig(ToolkitError):
    exit_code = EXIT_VALIDATION
