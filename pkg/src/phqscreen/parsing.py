"""Score and verdict extraction from free-text model replies.

Every parser returns a ``ParseOutcome`` whose ``value`` is ``None`` (NA) when
nothing usable was found or validation failed. Rules are tried in order and
the first rule that matches decides; within a rule the last match wins,
because replies tend to refine toward their conclusion.
"""

from __future__ import annotations

import re
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Generic, TypeVar

RULESET_VERSION = "ruleset-v1"

V = TypeVar("V")

LIKELIHOOD_FORMAT = "Likelihood of Ongoing Mental Health Disorder: N/7"
TOTAL_FORMAT = "Estimated PHQ-8 Score: a+b+c+d+e+f+g+h=T"
BREAKDOWN_FORMAT = "Total PHQ-8 Score: a+b+c+d+e+f+g+h = T"
VERDICT_FORMAT = "I agree / I do not agree with the assigned score. The revised PHQ-8 score of T"


@dataclass(frozen=True)
class ParseOutcome(Generic[V]):
    value: V | None
    matched_rule: str | None = None
    diagnostics: tuple[str, ...] = ()

    @property
    def is_na(self) -> bool:
        return self.value is None


def _na(*diagnostics: str) -> ParseOutcome:
    return ParseOutcome(None, None, tuple(diagnostics))


@dataclass(frozen=True)
class Phq8Total:
    total: int
    addends: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Verdict:
    verdict: str  # "Agree" | "Disagree" | "Unclear"
    revised_total: int | None = None


_EMPHASIS = re.compile(r"\*\*|\*|__|</?(?:b|strong|em|i)>", re.IGNORECASE)


def strip_emphasis(text: str) -> str:
    return _EMPHASIS.sub("", text)


# -- likelihood -------------------------------------------------------------

_PARTICIPANT_HEADER = re.compile(
    r"^[ \t>#\-\d.]*Participant\s+(?:ID\s*)?#?\s*(\d+)\s*[:.\-)]?",
    re.IGNORECASE | re.MULTILINE,
)
_LIKELIHOOD = re.compile(r"Likelihood[^\n\d]*?:?\s*(\d+)\s*/\s*7\b", re.IGNORECASE)

_WORD_NUMBERS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4,
    "five": 5, "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_WORD_LIKELIHOOD = re.compile(
    r"\b(" + "|".join(_WORD_NUMBERS) + r"|\d+)\s+out\s+of\s+(?:7|seven)\b", re.IGNORECASE
)


def segment_by_participant(reply: str) -> dict[int, str]:
    """Map participant id -> concatenated text of every section headed for that id."""
    text = strip_emphasis(reply)
    headers = list(_PARTICIPANT_HEADER.finditer(text))
    segments: dict[int, str] = {}
    for i, m in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        pid = int(m.group(1))
        body = text[m.end():end]
        segments[pid] = segments[pid] + "\n" + body if pid in segments else body
    return segments


def _likelihood_in(segment: str, word_numbers: bool) -> ParseOutcome[int]:
    matches = list(_LIKELIHOOD.finditer(segment))
    rule = "likelihood/anchor-n-of-7"
    if not matches and word_numbers:
        matches = list(_WORD_LIKELIHOOD.finditer(segment))
        rule = "likelihood/word-number"
    if not matches:
        return _na("no likelihood line")
    raw = matches[-1].group(1).lower()
    value = _WORD_NUMBERS[raw] if raw in _WORD_NUMBERS else int(raw)
    if not 1 <= value <= 7:
        return _na(f"out of range: {value}/7")
    return ParseOutcome(value, rule)


def parse_likelihood(
    reply: str, expected_ids: Sequence[int], *, word_numbers: bool = False
) -> dict[int, ParseOutcome[int]]:
    """Per-participant 1..7 likelihoods from a (possibly multi-participant) reply.

    A reply without any participant headers is treated as a single segment
    when exactly one id is expected.
    """
    segments = segment_by_participant(reply)
    if not segments and len(expected_ids) == 1:
        segments = {expected_ids[0]: strip_emphasis(reply)}
    out = {}
    for pid in expected_ids:
        if pid not in segments:
            out[pid] = _na(f"participant {pid} not found in reply")
        else:
            out[pid] = _likelihood_in(segments[pid], word_numbers)
    return out


def segment_rationale(reply: str, participant_id: int, single: bool = False) -> str:
    segments = segment_by_participant(reply)
    if not segments and single:
        return strip_emphasis(reply).strip()
    return segments.get(participant_id, "").strip()


# -- PHQ-8 totals -----------------------------------------------------------

_TOTAL_ANCHOR = r"(?:Estimated|Total|Final|Revised)?\s*PHQ-?\s?8\s*Score\s*:\s*"
_SUM_EXPR = re.compile(
    _TOTAL_ANCHOR + r"(\d+(?:\s*\+\s*\d+)+)\s*=\s*(\d+)", re.IGNORECASE
)
_BARE_TOTAL = re.compile(_TOTAL_ANCHOR + r"(\d+)(?!\s*[+\d])", re.IGNORECASE)


def _validate_expression(addend_text: str, stated: str) -> ParseOutcome[Phq8Total]:
    addends = tuple(int(a) for a in re.split(r"\s*\+\s*", addend_text.strip()))
    total = int(stated)
    problems = []
    if sum(addends) != total:
        problems.append(f"arithmetic mismatch: addends sum to {sum(addends)}, stated {total}")
    if len(addends) != 8:
        problems.append(f"expected 8 addends, found {len(addends)}")
    if any(not 0 <= a <= 3 for a in addends):
        problems.append("addend outside 0..3")
    if problems:
        return _na(*problems)
    return ParseOutcome(Phq8Total(total, addends), "phq8/sum-expression")


def parse_phq8_total(reply: str) -> ParseOutcome[Phq8Total]:
    text = strip_emphasis(reply)
    exprs = list(_SUM_EXPR.finditer(text))
    if exprs:
        last = exprs[-1]
        return _validate_expression(last.group(1), last.group(2))
    bare = list(_BARE_TOTAL.finditer(text))
    if bare:
        total = int(bare[-1].group(1))
        if not 0 <= total <= 24:
            return _na(f"total {total} outside 0..24")
        return ParseOutcome(Phq8Total(total), "phq8/bare-integer")
    return _na("no PHQ-8 score line")


# -- itemized breakdown -----------------------------------------------------

_ITEM_SCORE = re.compile(r"(?<![\w-])Score\s*:\s*(\d+)", re.IGNORECASE)
_NOT_ITEM_LINE = re.compile(r"PHQ-?\s?8\s*Score", re.IGNORECASE)


def parse_item_breakdown(reply: str) -> ParseOutcome[tuple[int, ...]]:
    """Eight item scores; the closing sum expression is authoritative when valid."""
    text = strip_emphasis(reply)
    diagnostics = []
    exprs = list(_SUM_EXPR.finditer(text))
    if exprs:
        outcome = _validate_expression(exprs[-1].group(1), exprs[-1].group(2))
        if not outcome.is_na:
            return ParseOutcome(outcome.value.addends, "items/sum-expression")
        diagnostics.extend(outcome.diagnostics)
    else:
        diagnostics.append("no total expression")

    scores = []
    for line in text.splitlines():
        if _NOT_ITEM_LINE.search(line):
            continue
        scores.extend(int(m.group(1)) for m in _ITEM_SCORE.finditer(line))
    if len(scores) != 8:
        return _na(*diagnostics, f"expected 8 item score lines, found {len(scores)}")
    if any(not 0 <= s <= 3 for s in scores):
        return _na(*diagnostics, "item score outside 0..3")
    return ParseOutcome(tuple(scores), "items/score-lines", tuple(diagnostics))


# -- verdict ----------------------------------------------------------------

_DISAGREE = re.compile(
    r"\b(?:(?:do|does|did|can|could|would)\s*(?:not|n't)|cannot|don't|doesn't|not)\s+"
    r"(?:fully\s+|entirely\s+|completely\s+)?agree\b"
    r"|\bdisagree(?:s|d)?\b",
    re.IGNORECASE,
)
_AGREE = re.compile(r"\bagree(?:s|d)?\b", re.IGNORECASE)
_REVISED = [
    ("revised/revised-score-of", re.compile(
        r"revised\s+PHQ-?\s?8\s+score\s*(?:of|is|:|=)?\s*(\d+)", re.IGNORECASE)),
    ("revised/re-evaluated-score-of", re.compile(
        r"re-?evaluated\s+(?:PHQ-?\s?8\s+)?score\s*(?:of|is|:|=)?\s*(\d+)", re.IGNORECASE)),
]


def _first_valid_total(text: str) -> int | None:
    for m in _SUM_EXPR.finditer(text):
        outcome = _validate_expression(m.group(1), m.group(2))
        if not outcome.is_na:
            return outcome.value.total
    for m in _BARE_TOTAL.finditer(text):
        if 0 <= int(m.group(1)) <= 24:
            return int(m.group(1))
    return None


def parse_verdict(reply: str) -> ParseOutcome[Verdict]:
    """Agree/Disagree verdict (last phrase wins) plus any revised total."""
    text = strip_emphasis(reply)
    hits = [(m.start(), m.end(), "Disagree") for m in _DISAGREE.finditer(text)]
    for m in _AGREE.finditer(text):
        if not any(s <= m.start() < e for s, e, _ in hits):
            hits.append((m.start(), m.end(), "Agree"))
    if not hits:
        return ParseOutcome(Verdict("Unclear"), "verdict/unclear", ("no verdict phrase",))
    hits.sort()
    verdict_pos, _, verdict = hits[-1]

    diagnostics = []
    revised = None
    for rule, pattern in _REVISED:
        values = [int(m.group(1)) for m in pattern.finditer(text)]
        if values:
            if 0 <= values[-1] <= 24:
                revised = values[-1]
                break
            diagnostics.append(f"{rule}: {values[-1]} outside 0..24")
    if revised is None:
        revised = _first_valid_total(text[verdict_pos:])
    return ParseOutcome(Verdict(verdict, revised), f"verdict/{verdict.lower()}", tuple(diagnostics))
