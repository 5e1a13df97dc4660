from pathlib import Path
from unittest.mock import MagicMock

import pytest

from caplet.lang.parser import parse_files
from caplet.lang.typecheck import typecheck
from caplet.services.pipeline import library_files

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "corpus"
LIBRARY = CORPUS / "lib"


@pytest.fixture
def corpus_dir():
    return CORPUS


@pytest.fixture
def write_cap(tmp_path):
    """Writes client source to a .cap file in a temporary directory."""
    def write(source: str, name: str = "client.cap") -> Path:
        path = tmp_path / name
        path.write_text(source, encoding="utf-8")
        return path
    return write


@pytest.fixture
def load_typed(write_cap):
    """
    Parses client source together with the corpus library and type checks it.
    Returns the TypedProgram.
    """
    def load(source: str, name: str = "client.cap"):
        path = write_cap(source, name)
        return typecheck(parse_files([path], tuple(library_files([LIBRARY]))))
    return load


@pytest.fixture
def mock_process():
    """A stand-in for a finished solver process."""
    process = MagicMock()
    process.returncode = 0
    process.communicate.return_value = ("unsat\n", "")
    return process


@pytest.fixture(autouse=True)
def log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setenv("CAPLET_LOG_FILE", str(tmp_path / "caplet.log"))
