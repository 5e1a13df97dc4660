"""The corpus manifest: every client file with the exit code `caplet verify --expect` must give."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

from caplet.schemas import ManifestEntry

logger = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"


def corpus_manifest(root: Path) -> list[ManifestEntry]:
    path = Path(root) / MANIFEST
    if not path.exists():
        return []
    with path.open(encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle, delimiter="\t"))
    return [ManifestEntry(file=row["file"], expected_exit=int(row["expected_exit"])) for row in rows]


def client_files(root: Path) -> list[str]:
    root = Path(root)
    return sorted(p.relative_to(root).as_posix() for p in (root / "clients").glob("*.cap"))


def manifest_problems(root: Path) -> list[str]:
    """Client files missing from the manifest, listed twice, or listed but absent."""
    listed = [entry.file for entry in corpus_manifest(root)]
    present = client_files(root)
    problems = [f"{name} is listed {listed.count(name)} times" for name in sorted(set(listed))
                if listed.count(name) > 1]
    problems.extend(f"{name} is not in the manifest" for name in present if name not in listed)
    problems.extend(f"{name} does not exist" for name in sorted(set(listed)) if name not in present)
    if not present:
        problems.append("the corpus has no client files")
    for problem in problems:
        logger.warning(f"Corpus manifest: {problem}")
    return problems
