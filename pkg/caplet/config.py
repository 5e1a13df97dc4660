import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    """Verifier settings, read from ``CAPLET_*`` environment variables and ``.env``."""

    solver: Optional[str] = Field(default=None, description="Solver executable; the bundled z3 runner when unset.")
    solver_args: list[str] = Field(default_factory=list, description="Extra arguments passed before the script path.")
    timeout_ms: int = Field(default=30000, ge=1, description="Per-obligation solver timeout in milliseconds.")
    jobs: int = Field(default_factory=lambda: max(1, os.cpu_count() or 1), ge=1,
                      description="Solver processes run concurrently.")
    log_file: str = Field(default="caplet.log", description="File the log handler writes to.")

    model_config = SettingsConfigDict(env_prefix="CAPLET_", env_file=".env", extra="ignore")

    @field_validator("solver")
    @classmethod
    def _blank_solver(cls, value: Optional[str]) -> Optional[str]:
        return value or None
