import pytest
from pydantic import ValidationError

from caplet.config import Settings


def test_defaults(monkeypatch):
    monkeypatch.delenv("CAPLET_SOLVER", raising=False)
    monkeypatch.delenv("CAPLET_TIMEOUT_MS", raising=False)
    settings = Settings(_env_file=None)

    assert settings.solver is None
    assert settings.timeout_ms == 30000
    assert settings.jobs >= 1


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CAPLET_SOLVER", "cvc5")
    monkeypatch.setenv("CAPLET_TIMEOUT_MS", "1500")
    monkeypatch.setenv("CAPLET_SOLVER_ARGS", '["--lang", "smt2"]')

    settings = Settings(_env_file=None)

    assert settings.solver == "cvc5"
    assert settings.timeout_ms == 1500
    assert settings.solver_args == ["--lang", "smt2"]


def test_blank_solver_means_bundled(monkeypatch):
    monkeypatch.setenv("CAPLET_SOLVER", "")

    assert Settings(_env_file=None).solver is None


def test_timeout_must_be_positive(monkeypatch):
    monkeypatch.setenv("CAPLET_TIMEOUT_MS", "0")

    with pytest.raises(ValidationError):
        Settings(_env_file=None)
