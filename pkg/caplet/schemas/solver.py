from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class SolverStatus(str, Enum):
    UNSAT = "unsat"
    SAT = "sat"
    UNKNOWN = "unknown"
    TIMEOUT = "timeout"
    PROCESS_ERROR = "process_error"


class Verdict(str, Enum):
    VERIFIED = "verified"
    NOT_VERIFIED = "not_verified"
    INCONCLUSIVE = "inconclusive"


class SolverResult(BaseModel):
    status: SolverStatus
    elapsed_ms: int = Field(default=0, description="Wall-clock time of the solver process.")
    message: Optional[str] = Field(default=None, description="Error text for process errors.")
    output: str = Field(default="", description="Raw solver output, the model text for sat answers.")

    model_config = ConfigDict(frozen=True)

    @property
    def verdict(self) -> Verdict:
        if self.status is SolverStatus.UNSAT:
            return Verdict.VERIFIED
        if self.status is SolverStatus.SAT:
            return Verdict.NOT_VERIFIED
        return Verdict.INCONCLUSIVE


class VerificationOutcome(BaseModel):
    file: str
    function: str
    line: int
    col: int
    kind: str = Field(description="Obligation classification: assert, precondition or postcondition.")
    index: int = Field(description="Position of the obligation within its function.")
    description: str = ""
    verdict: Verdict
    result: SolverResult

    def sort_key(self) -> tuple:
        return (self.file, self.line, self.col, self.function, self.index)
