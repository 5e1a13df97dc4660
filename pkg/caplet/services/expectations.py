"""Expectation comments: ``//~ VERIFY``, ``//~ FAIL`` and ``//~ INCOMPLETE`` on obligation lines."""
from __future__ import annotations

import logging
import re
from collections import defaultdict

from caplet.errors import ExpectationError
from caplet.lang.ast import Span
from caplet.schemas import ExpectationMismatch, Verdict, VerificationOutcome

logger = logging.getLogger(__name__)

EXPECTATION = re.compile(r"//~\s*(VERIFY|FAIL|INCOMPLETE)\b")

# INCOMPLETE documents a known incompleteness; it is met like FAIL
_EXPECTED_VERDICT = {"VERIFY": Verdict.VERIFIED, "FAIL": Verdict.NOT_VERIFIED, "INCOMPLETE": Verdict.NOT_VERIFIED}


def parse_expectations(source: str) -> dict[int, str]:
    expectations = {}
    for number, line in enumerate(source.splitlines(), start=1):
        match = EXPECTATION.search(line)
        if match:
            expectations[number] = match.group(1)
    return expectations


def _line_verdict(verdicts: list[Verdict]) -> Verdict:
    if Verdict.INCONCLUSIVE in verdicts:
        return Verdict.INCONCLUSIVE
    if Verdict.NOT_VERIFIED in verdicts:
        return Verdict.NOT_VERIFIED
    return Verdict.VERIFIED


def check_expectations(outcomes: list[VerificationOutcome], source: str,
                       filename: str = "<input>") -> list[ExpectationMismatch]:
    """Compare the outcomes of one file against its expectation comments.

    A line without a comment expects VERIFY. A FAIL line is met when some
    obligation on it is not verified and none is inconclusive.
    """
    expectations = parse_expectations(source)
    by_line: dict[int, list[Verdict]] = defaultdict(list)
    for outcome in outcomes:
        if outcome.file == filename:
            by_line[outcome.line].append(outcome.verdict)
    for line, expected in expectations.items():
        if line not in by_line:
            raise ExpectationError(f"`//~ {expected}` on a line with no proof obligation", Span(line, 1), filename)
    mismatches = []
    for line in sorted(by_line):
        expected = expectations.get(line, "VERIFY")
        actual = _line_verdict(by_line[line])
        if actual is not _EXPECTED_VERDICT[expected]:
            mismatches.append(ExpectationMismatch(file=filename, line=line, expected=expected, actual=actual,
                                                  message=f"expected {expected}, got {actual.value}"))
    logger.info(f"{filename}: {len(mismatches)} unmet expectations out of {len(by_line)} obligation lines")
    return mismatches
