"""Exception types shared across the package."""

from __future__ import annotations


class CycleCountError(Exception):
    """Base class for every error raised by cyclecount."""


class SchemaError(CycleCountError):
    """The input file does not provide a required column."""


class StudyPeriodError(CycleCountError):
    """Visits fall outside the declared study period, or no period can be derived."""


class RateUndefinedError(CycleCountError):
    """Normalized rates requested for a group with zero patients."""


class RankDeficiencyError(CycleCountError):
    """Design matrix columns are linearly dependent."""

    def __init__(self, columns: list[str]):
        self.columns = list(columns)
        super().__init__(
            "design matrix is rank deficient; dependent columns: "
            + ", ".join(self.columns)
        )


class NonNestedError(CycleCountError):
    """Model comparison requested for fits that are not nested on the same data."""


class DegenerateDataError(CycleCountError):
    """A statistical test received data with no usable variation."""


class PipelineError(CycleCountError):
    """A pipeline stage failed; carries the stage name and the causing error."""

    def __init__(self, stage: str, cause: Exception | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
