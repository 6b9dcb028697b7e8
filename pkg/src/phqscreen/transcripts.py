"""Interview transcript and label ingest.

Transcripts use the tab-separated distribution layout
(``start_time``, ``stop_time``, ``speaker``, ``value``) with one file per
participant named ``<id>_TRANSCRIPT``. Labels are a comma-separated file
with ``Participant_ID``, ``PHQ8_Binary`` and ``PHQ8_Score`` columns.
"""

from __future__ import annotations

import csv
import io
import math
import re
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from phqscreen.errors import (
    EmptyFile,
    InconsistentLabel,
    MalformedRow,
    MissingLabel,
    OverlappingSplits,
    UnknownSpeaker,
)

TRANSCRIPT_HEADER = ("start_time", "stop_time", "speaker", "value")
SEPARATOR = "./"
POSITIVE_CUTOFF = 10

# Item columns in questionnaire order.
PHQ8_ITEM_COLUMNS = (
    "PHQ8_NoInterest",
    "PHQ8_Depressed",
    "PHQ8_Sleep",
    "PHQ8_Tired",
    "PHQ8_Appetite",
    "PHQ8_Failure",
    "PHQ8_Concentrating",
    "PHQ8_Moving",
)


class Speaker(str, Enum):
    INTERVIEWER = "Interviewer"
    PARTICIPANT = "Participant"


# Raw speaker tag -> role. The virtual interviewer is named "Ellie".
SPEAKER_TAGS = {"Ellie": Speaker.INTERVIEWER, "Participant": Speaker.PARTICIPANT}
_TAG_FOR_SPEAKER = {v: k for k, v in SPEAKER_TAGS.items()}


@dataclass(frozen=True)
class Utterance:
    start_s: float
    stop_s: float
    speaker: Speaker
    text: str


@dataclass(frozen=True)
class Transcript:
    participant_id: int
    utterances: tuple[Utterance, ...]


@dataclass(frozen=True)
class JointDialogue:
    participant_id: int
    text: str
    utterance_count: int


@dataclass(frozen=True)
class LabelRecord:
    participant_id: int
    phq8_total: int
    phq8_binary: int
    item_scores: tuple[int, ...] | None = None


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    participant_ids: frozenset[int] = field(default_factory=frozenset)


@dataclass(frozen=True)
class CohortSummary:
    n_total: int
    n_positive: int
    n_negative: int
    ratio: float  # NaN when either class is empty

    def row(self) -> dict[str, str]:
        ratio = "NaN" if math.isnan(self.ratio) else f"{self.ratio:.2f}"
        return {
            "NoP": str(self.n_total),
            "NoP PHQ-8 >= 10 (A)": str(self.n_positive),
            "NoP PHQ-8 < 10 (B)": str(self.n_negative),
            "Ratio A/B": ratio,
        }


def _decode(raw: bytes | str) -> str:
    if isinstance(raw, str):
        return raw
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise MalformedRow(f"not valid UTF-8: {exc}") from exc


def _parse_time(cell: str, line: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise MalformedRow(f"non-numeric time {cell!r}", line) from None
    if not math.isfinite(value) or value < 0:
        raise MalformedRow(f"invalid time {cell!r}", line)
    return value


def _rows(reader):
    line_no = 0
    while True:
        line_no += 1
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            raise MalformedRow(str(exc), line_no) from exc
        yield line_no, row


def parse_transcript_file(raw: bytes | str, participant_id: int) -> Transcript:
    """Parse one tab-separated transcript.

    Rows are stable-sorted by start time; blank lines are skipped.
    """
    if participant_id <= 0:
        raise ValueError("participant_id must be positive")
    text = _decode(raw)
    rows = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    utterances: list[Utterance] = []
    seen_header = False
    for line_no, row in _rows(rows):
        if not row or all(not c.strip() for c in row):
            continue
        if not seen_header:
            seen_header = True
            if [c.strip().lower() for c in row] != list(TRANSCRIPT_HEADER):
                raise MalformedRow(f"expected header {TRANSCRIPT_HEADER}, got {row}", line_no)
            continue
        if len(row) != 4:
            raise MalformedRow(f"expected 4 columns, got {len(row)}", line_no)
        start, stop, tag, value = row
        start_s = _parse_time(start, line_no)
        stop_s = _parse_time(stop, line_no)
        if stop_s < start_s:
            raise MalformedRow("stop_time precedes start_time", line_no)
        speaker = SPEAKER_TAGS.get(tag.strip())
        if speaker is None:
            raise UnknownSpeaker(f"unknown speaker {tag!r}", line_no)
        utterances.append(Utterance(start_s, stop_s, speaker, value))
    if not utterances:
        raise EmptyFile(f"transcript for participant {participant_id} has no data rows")
    utterances.sort(key=lambda u: u.start_s)
    return Transcript(participant_id, tuple(utterances))


def serialize_transcript(t: Transcript) -> str:
    out = ["\t".join(TRANSCRIPT_HEADER)]
    for u in t.utterances:
        if "\t" in u.text or "\n" in u.text or "\r" in u.text:
            raise ValueError("utterance text cannot contain tabs or newlines")
        out.append(f"{u.start_s!r}\t{u.stop_s!r}\t{_TAG_FOR_SPEAKER[u.speaker]}\t{u.text}")
    return "\n".join(out) + "\n"


def extract_participant_text(t: Transcript) -> JointDialogue:
    """Join participant turns as ``"turn./ turn./"``; whitespace-only turns are dropped."""
    kept = [
        u.text.strip()
        for u in t.utterances
        if u.speaker is Speaker.PARTICIPANT and u.text.strip()
    ]
    return JointDialogue(t.participant_id, " ".join(s + SEPARATOR for s in kept), len(kept))


def _int_cell(value: str, column: str, line: int) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise MalformedRow(f"column {column}: expected integer, got {value!r}", line) from None


def _find_column(header: Sequence[str], *names: str) -> int | None:
    lowered = [h.strip().lower() for h in header]
    for name in names:
        if name.lower() in lowered:
            return lowered.index(name.lower())
    return None


def load_labels(raw: bytes | str) -> list[LabelRecord]:
    text = _decode(raw)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("label file is empty") from None
    id_col = _find_column(header, "Participant_ID", "participant_id")
    bin_col = _find_column(header, "PHQ8_Binary", "PHQ_Binary")
    score_col = _find_column(header, "PHQ8_Score", "PHQ_Score")
    if id_col is None or bin_col is None or score_col is None:
        raise MalformedRow(f"label header missing required columns: {header}", 1)
    item_cols = [_find_column(header, name) for name in PHQ8_ITEM_COLUMNS]
    has_items = all(c is not None for c in item_cols)

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise MalformedRow(f"expected {len(header)} columns, got {len(row)}", line_no)
        pid = _int_cell(row[id_col], "Participant_ID", line_no)
        binary = _int_cell(row[bin_col], "PHQ8_Binary", line_no)
        total = _int_cell(row[score_col], "PHQ8_Score", line_no)
        if pid <= 0:
            raise MalformedRow(f"participant id must be positive, got {pid}", line_no)
        if not 0 <= total <= 24:
            raise InconsistentLabel(f"line {line_no}: PHQ-8 total {total} outside 0..24")
        if binary not in (0, 1):
            raise InconsistentLabel(f"line {line_no}: binary label {binary} not in {{0,1}}")
        if binary != int(total >= POSITIVE_CUTOFF):
            raise InconsistentLabel(
                f"line {line_no}: participant {pid} binary={binary} but total={total}"
            )
        items = None
        if has_items and all(row[c].strip() for c in item_cols):
            items = tuple(_int_cell(row[c], header[c], line_no) for c in item_cols)
            if any(not 0 <= s <= 3 for s in items):
                raise InconsistentLabel(f"line {line_no}: item score outside 0..3")
            if sum(items) != total:
                raise InconsistentLabel(
                    f"line {line_no}: item scores sum to {sum(items)}, total is {total}"
                )
        records.append(LabelRecord(pid, total, binary, items))
    return records


def load_split(name: str, raw: bytes | str) -> DatasetSplit:
    """One participant id per line. A leading non-numeric header line is tolerated."""
    if name not in ("train", "dev", "test"):
        raise ValueError(f"unknown split {name!r}")
    ids = set()
    for line_no, line in enumerate(_decode(raw).splitlines(), start=1):
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        if not cell.isdigit():
            if line_no == 1:
                continue
            raise MalformedRow(f"expected participant id, got {cell!r}", line_no)
        ids.add(int(cell))
    return DatasetSplit(name, frozenset(ids))


def validate_splits(splits: Iterable[DatasetSplit]) -> None:
    owner: dict[int, str] = {}
    for split in splits:
        for pid in split.participant_ids:
            if pid in owner:
                raise OverlappingSplits(
                    f"participant {pid} appears in both {owner[pid]!r} and {split.name!r}"
                )
            owner[pid] = split.name


def summarize_cohort(
    labels: Iterable[LabelRecord], split: DatasetSplit | None = None
) -> CohortSummary:
    by_id = {r.participant_id: r for r in labels}
    if split is not None:
        missing = sorted(split.participant_ids - by_id.keys())
        if missing:
            raise MissingLabel(f"split {split.name!r} ids without labels: {missing}")
        by_id = {pid: by_id[pid] for pid in split.participant_ids}
    n_pos = sum(1 for r in by_id.values() if r.phq8_total >= POSITIVE_CUTOFF)
    n_neg = len(by_id) - n_pos
    # a single-class cohort has no meaningful ratio
    ratio = round(n_pos / n_neg, 2) if n_pos and n_neg else math.nan
    return CohortSummary(len(by_id), n_pos, n_neg, ratio)


# -- token counting ---------------------------------------------------------

Tokenizer = Callable[[str], int]


def approx_tokens(text: str) -> int:
    """Whitespace words x 4/3, rounded up."""
    words = len(text.split())
    return -(-words * 4 // 3)


def whitespace_tokens(text: str) -> int:
    return len(text.split())


TOKENIZERS: dict[str, Tokenizer] = {
    "approx": approx_tokens,
    "whitespace": whitespace_tokens,
}


def resolve_tokenizer(spec: str | Tokenizer = "approx") -> Tokenizer:
    """Look up a tokenizer by name; ``"tiktoken:<encoding>"`` loads an exact BPE if installed."""
    if callable(spec):
        return spec
    if spec in TOKENIZERS:
        return TOKENIZERS[spec]
    if spec.startswith("tiktoken:"):
        try:
            import tiktoken
        except ImportError as exc:
            raise ValueError("tokenizer 'tiktoken:...' needs the tiktoken extra") from exc
        enc = tiktoken.get_encoding(spec.split(":", 1)[1])
        return lambda text: len(enc.encode(text))
    raise ValueError(f"unknown tokenizer {spec!r}; known: {sorted(TOKENIZERS)}")


def count_tokens(text: str, tokenizer: str | Tokenizer = "approx") -> int:
    return resolve_tokenizer(tokenizer)(text)


def histogram(values: Sequence[int | float], bin_width: int) -> list[tuple[int, int]]:
    """Fixed-width bins from 0 through the bin holding ``max(values)``; empty bins included."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if not values:
        return []
    if min(values) < 0:
        raise ValueError("histogram values must be non-negative")
    n_bins = int(max(values) // bin_width) + 1
    counts = [0] * n_bins
    for v in values:
        counts[int(v // bin_width)] += 1
    return [(i * bin_width, c) for i, c in enumerate(counts)]


def token_histogram(
    dialogues: Sequence[JointDialogue],
    bin_width: int,
    tokenizer: str | Tokenizer = "approx",
) -> list[tuple[int, int]]:
    tok = resolve_tokenizer(tokenizer)
    return histogram([tok(d.text) for d in dialogues], bin_width)


# -- files ------------------------------------------------------------------

_TRANSCRIPT_NAME = re.compile(r"^(\d+)_TRANSCRIPT(\.\w+)?$")


def load_transcript_dir(directory: str | Path) -> list[Transcript]:
    """Load every ``<id>_TRANSCRIPT[.ext]`` file, ordered by participant id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyFile(f"transcript directory not found: {directory}")
    found = []
    for path in directory.iterdir():
        m = _TRANSCRIPT_NAME.match(path.name)
        if m and path.is_file():
            found.append((int(m.group(1)), path))
    if not found:
        raise EmptyFile(f"no *_TRANSCRIPT files in {directory}")
    found.sort()
    out = []
    for pid, path in found:
        try:
            out.append(parse_transcript_file(path.read_bytes(), pid))
        except MalformedRow as exc:
            raise type(exc)(f"{path}: {exc}") from exc
        except EmptyFile as exc:
            raise EmptyFile(f"{path}: {exc}") from exc
    return out


def write_dialogues(dialogues: Iterable[JointDialogue], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["participant_id", "text"])
        for d in dialogues:
            writer.writerow([d.participant_id, d.text])


def read_dialogues(path: str | Path) -> list[JointDialogue]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRow(f"{path}: expected 2 columns", line_no)
            text = row[1]
            out.append(JointDialogue(_int_cell(row[0], "participant_id", line_no), text,
                                     text.count(SEPARATOR)))
    return out


def labels_by_id(labels: Iterable[LabelRecord]) -> Mapping[int, LabelRecord]:
    return {r.participant_id: r for r in labels}
