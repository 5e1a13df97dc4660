from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from caplet.schemas.solver import Verdict, VerificationOutcome


class ReportEntry(BaseModel):
    file: str
    line: int
    col: int
    kind: str
    verdict: Verdict
    millis: int

    @classmethod
    def from_outcome(cls, outcome: VerificationOutcome) -> "ReportEntry":
        return cls(file=outcome.file, line=outcome.line, col=outcome.col, kind=outcome.kind,
                   verdict=outcome.verdict, millis=outcome.result.elapsed_ms)


class Diagnostic(BaseModel):
    file: str
    line: int = 0
    col: int = 0
    severity: Literal["error", "warning"] = "error"
    message: str
    rule: Optional[str] = Field(default=None, description="Purity rule for purity violations.")

    def render(self) -> str:
        location = f"{self.file}:{self.line}:{self.col}" if self.line else self.file
        return f"{location}: {self.severity}: {self.message}"


class ExpectationMismatch(BaseModel):
    file: str
    line: int
    expected: str = Field(description="VERIFY, FAIL or INCOMPLETE.")
    actual: Optional[Verdict] = Field(default=None, description="Verdict found; none when no obligation is there.")
    message: str = ""


class JsonReport(BaseModel):
    schema_version: Literal[1] = Field(default=1, alias="schema")
    entries: list[ReportEntry] = Field(default_factory=list)
    diagnostics: list[Diagnostic] = Field(default_factory=list)
    mismatches: list[ExpectationMismatch] = Field(default_factory=list)
    exit_code: int = 0

    model_config = ConfigDict(populate_by_name=True)

    def dump(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)


class ManifestEntry(BaseModel):
    file: str
    expected_exit: int = Field(ge=0, le=3)
