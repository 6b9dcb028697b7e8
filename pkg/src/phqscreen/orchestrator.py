"""Task 1 (batched 7-point likelihood) and Task 2 (three-stage PHQ-8) runs.

Every failure is contained per participant: timeouts, transport errors,
cassette misses and unparsable replies all become NA. Only credential
failures abort a run.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from phqscreen import knowledge, parsing
from phqscreen.backend import (
    AuthError,
    Backend,
    BackendTimeout,
    ChatMessage,
    ChatRequest,
    ChatResponse,
)
from phqscreen.errors import BackendError, ConfigError
from phqscreen.knowledge import BackgroundConfig, PromptBundle
from phqscreen.transcripts import JointDialogue

log = logging.getLogger(__name__)

# sink(participant_id, stage, raw_text) is called before a reply is parsed.
RawSink = Callable[[int, str, str], None]


@dataclass(frozen=True)
class Task1Assessment:
    participant_id: int
    likelihood: int | None
    rationale: str
    raw_reply: str
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class Phq8Estimate:
    total: int | None
    addends: tuple[int, ...] | None
    raw_reply: str
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class ItemizedBreakdown:
    item_scores: tuple[int, ...] | None
    total: int | None
    raw_reply: str
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class IndependentReview:
    verdict: str
    revised_total: int | None
    external_score: int
    raw_reply: str
    diagnostics: tuple[str, ...] = ()

    @property
    def estimate(self) -> int | None:
        """The stage-3 score: the revised total, or the assigned score when agreeing."""
        if self.revised_total is not None:
            return self.revised_total
        if self.verdict == "Agree":
            return self.external_score
        return None


@dataclass(frozen=True)
class Task2Session:
    participant_id: int
    stage1: Phq8Estimate
    stage2: ItemizedBreakdown
    stage3: IndependentReview
    messages: tuple[ChatMessage, ...]

    @property
    def has_na(self) -> bool:
        return (self.stage1.total is None or self.stage2.total is None
                or self.stage3.estimate is None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "participant_id": self.participant_id,
            "stage1": asdict(self.stage1),
            "stage2": asdict(self.stage2),
            "stage3": {**asdict(self.stage3), "estimate": self.stage3.estimate},
            "messages": [m.to_dict() for m in self.messages],
        }


@dataclass
class RunManifest:
    run_id: str
    task: int
    config_name: str
    model_id: str
    batch_size: int
    started_at: str = ""
    finished_at: str = ""
    cassette_path: str | None = None
    n_participants: int = 0
    n_na: int = 0
    ruleset: str = parsing.RULESET_VERSION
    extra: dict[str, Any] = field(default_factory=dict)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _ask(backend: Backend, messages: Sequence[ChatMessage], model_id: str,
         temperature: float, max_output_tokens: int | None) -> tuple[ChatResponse | None, str]:
    """One request; returns (response or None, diagnostic)."""
    req = ChatRequest(model_id, tuple(messages), temperature, max_output_tokens)
    try:
        return backend.complete(req), ""
    except BackendTimeout as exc:
        return None, f"timeout: {exc}"
    except AuthError:
        raise
    except BackendError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def repair_retry(
    backend: Backend,
    conversation: list[ChatMessage],
    bundle: PromptBundle,
    answer_format: str,
    parse: Callable[[str], parsing.ParseOutcome],
    *,
    retries: int,
    model_id: str,
    temperature: float = 0.0,
    max_output_tokens: int | None = None,
) -> tuple[str | None, parsing.ParseOutcome | None]:
    """Re-ask up to ``retries`` times with a format reminder.

    ``conversation`` is extended in place with each clarification and reply.
    Returns the last reply and its parse, or (None, None) if nothing came back.
    """
    reply, outcome = None, None
    for _ in range(retries):
        conversation.append(ChatMessage("user", knowledge.assemble_repair_prompt(bundle, answer_format)))
        resp, _diag = _ask(backend, conversation, model_id, temperature, max_output_tokens)
        if resp is None:
            break
        reply = resp.content
        conversation.append(ChatMessage("assistant", reply))
        outcome = parse(reply)
        if not outcome.is_na:
            break
    return reply, outcome


@dataclass(frozen=True)
class RunOptions:
    model_id: str = "gpt-4"
    temperature: float = 0.0
    max_output_tokens: int | None = None
    repair_retries: int = 1
    max_in_flight: int = 1
    context_limit: int = knowledge.DEFAULT_CONTEXT_LIMIT
    batch_limit: int = knowledge.DEFAULT_BATCH_LIMIT


def _run_batch(backend, cfg, bundle, batch: Sequence[JointDialogue], opts: RunOptions,
               sink: RawSink | None) -> list[Task1Assessment]:
    ids = [d.participant_id for d in batch]
    system, user = knowledge.task1_messages(
        cfg, bundle, batch, batch_limit=opts.batch_limit, context_limit=opts.context_limit
    )
    conversation = [ChatMessage("system", system), ChatMessage("user", user)]
    resp, diag = _ask(backend, conversation, opts.model_id, opts.temperature,
                      opts.max_output_tokens)
    if resp is None:
        return [Task1Assessment(pid, None, "", "", (diag,)) for pid in ids]

    reply = resp.content
    if sink:
        for pid in ids:
            sink(pid, "task1", reply)
    outcomes = parsing.parse_likelihood(reply, ids)
    replies = {pid: reply for pid in ids}

    missing = [pid for pid in ids if outcomes[pid].is_na]
    if missing and opts.repair_retries > 0:
        conversation.append(ChatMessage("assistant", reply))
        repaired, _ = repair_retry(
            backend, conversation, bundle, parsing.LIKELIHOOD_FORMAT,
            lambda text: _all_or_na(parsing.parse_likelihood(text, missing)),
            retries=opts.repair_retries, model_id=opts.model_id,
            temperature=opts.temperature, max_output_tokens=opts.max_output_tokens,
        )
        if repaired is not None:
            for pid, outcome in parsing.parse_likelihood(repaired, missing).items():
                if sink:
                    sink(pid, "task1_repair", repaired)
                if not outcome.is_na:
                    outcomes[pid] = outcome
                    replies[pid] = repaired

    single = len(ids) == 1
    return [
        Task1Assessment(
            pid,
            outcomes[pid].value,
            parsing.segment_rationale(replies[pid], pid, single=single),
            replies[pid],
            outcomes[pid].diagnostics,
        )
        for pid in ids
    ]


def _all_or_na(outcomes: dict[int, parsing.ParseOutcome]) -> parsing.ParseOutcome:
    if any(o.is_na for o in outcomes.values()):
        return parsing.ParseOutcome(None)
    return parsing.ParseOutcome(True, "all")


def run_task1(
    backend: Backend,
    cfg: BackgroundConfig,
    bundle: PromptBundle,
    dialogues: Sequence[JointDialogue],
    batch_size: int = 1,
    *,
    options: RunOptions = RunOptions(),
    run_id: str = "task1",
    sink: RawSink | None = None,
) -> tuple[list[Task1Assessment], RunManifest]:
    """Likelihood assessments in input order, one request per consecutive batch."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    manifest = RunManifest(run_id, 1, cfg.name, options.model_id, batch_size, _now())
    batches = [dialogues[i:i + batch_size] for i in range(0, len(dialogues), batch_size)]
    with ThreadPoolExecutor(max_workers=options.max_in_flight) as pool:
        results = list(pool.map(
            lambda b: _run_batch(backend, cfg, bundle, b, options, sink), batches
        ))
    assessments = [a for batch in results for a in batch]
    manifest.finished_at = _now()
    manifest.n_participants = len(assessments)
    manifest.n_na = sum(1 for a in assessments if a.likelihood is None)
    return assessments, manifest


def _stage(backend, conversation: list[ChatMessage], prompt: str, parse, answer_format: str,
           bundle, opts: RunOptions, sink, pid: int, stage: str):
    """Append ``prompt``, ask, parse, repair if needed. Returns (reply text, outcome)."""
    conversation.append(ChatMessage("user", prompt))
    resp, diag = _ask(backend, conversation, opts.model_id, opts.temperature,
                      opts.max_output_tokens)
    if resp is None:
        return "", parsing.ParseOutcome(None, None, (diag,))
    reply = resp.content
    if sink:
        sink(pid, stage, reply)
    conversation.append(ChatMessage("assistant", reply))
    outcome = parse(reply)
    if outcome.is_na and opts.repair_retries > 0:
        repaired, repaired_outcome = repair_retry(
            backend, conversation, bundle, answer_format, parse,
            retries=opts.repair_retries, model_id=opts.model_id,
            temperature=opts.temperature, max_output_tokens=opts.max_output_tokens,
        )
        if repaired is not None:
            if sink:
                sink(pid, f"{stage}_repair", repaired)
            if not repaired_outcome.is_na:
                return repaired, repaired_outcome
            outcome = parsing.ParseOutcome(
                None, None, outcome.diagnostics + repaired_outcome.diagnostics
            )
    return reply, outcome


def run_task2(
    backend: Backend,
    cfg: BackgroundConfig,
    bundle: PromptBundle,
    dialogue: JointDialogue,
    external_score: int,
    *,
    options: RunOptions = RunOptions(),
    sink: RawSink | None = None,
) -> Task2Session:
    """Three stages threaded through one conversation; a failed stage is NA and later stages still run."""
    stage3_prompt = knowledge.assemble_stage3_prompt(bundle, external_score)
    system, user = knowledge.stage1_messages(
        cfg, bundle, dialogue, context_limit=options.context_limit
    )
    pid = dialogue.participant_id
    conversation = [ChatMessage("system", system)]

    reply1, out1 = _stage(backend, conversation, user, parsing.parse_phq8_total,
                          parsing.TOTAL_FORMAT, bundle, options, sink, pid, "stage1")
    stage1 = Phq8Estimate(
        out1.value.total if out1.value else None,
        out1.value.addends if out1.value else None,
        reply1, out1.diagnostics,
    )

    reply2, out2 = _stage(backend, conversation, knowledge.assemble_stage2_prompt(bundle),
                          parsing.parse_item_breakdown, parsing.BREAKDOWN_FORMAT,
                          bundle, options, sink, pid, "stage2")
    stage2 = ItemizedBreakdown(
        out2.value, sum(out2.value) if out2.value else None, reply2, out2.diagnostics
    )

    # An Unclear verdict is a value, not NA; repair only when no verdict was found.
    def parse3(text):
        o = parsing.parse_verdict(text)
        return parsing.ParseOutcome(None, None, o.diagnostics) if o.value.verdict == "Unclear" else o

    reply3, out3 = _stage(backend, conversation, stage3_prompt, parse3,
                          parsing.VERDICT_FORMAT, bundle, options, sink, pid, "stage3")
    verdict = out3.value or parsing.Verdict("Unclear")
    stage3 = IndependentReview(
        verdict.verdict, verdict.revised_total, external_score, reply3, out3.diagnostics
    )
    return Task2Session(pid, stage1, stage2, stage3, tuple(conversation))


def run_task2_batch(
    backend: Backend,
    cfg: BackgroundConfig,
    bundle: PromptBundle,
    dialogues: Sequence[JointDialogue],
    external_scores: dict[int, int],
    *,
    options: RunOptions = RunOptions(),
    run_id: str = "task2",
    sink: RawSink | None = None,
) -> tuple[list[Task2Session], RunManifest]:
    missing = [d.participant_id for d in dialogues if d.participant_id not in external_scores]
    if missing:
        raise ConfigError(f"no external PHQ-8 score for participants {missing}")
    manifest = RunManifest(run_id, 2, cfg.name, options.model_id, 1, _now())
    with ThreadPoolExecutor(max_workers=options.max_in_flight) as pool:
        sessions = list(pool.map(
            lambda d: run_task2(backend, cfg, bundle, d, external_scores[d.participant_id],
                                options=options, sink=sink),
            dialogues,
        ))
    manifest.finished_at = _now()
    manifest.n_participants = len(sessions)
    manifest.n_na = sum(1 for s in sessions if s.has_na)
    manifest.extra = {
        "n_na_stage1": sum(1 for s in sessions if s.stage1.total is None),
        "n_na_stage2": sum(1 for s in sessions if s.stage2.total is None),
        "n_na_stage3": sum(1 for s in sessions if s.stage3.estimate is None),
    }
    return sessions, manifest


# -- run directory ----------------------------------------------------------

def dump_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def task1_to_dict(a: Task1Assessment) -> dict[str, Any]:
    return asdict(a)


class RunWriter:
    """``<run_dir>/manifest.json``, ``raw/<pid>_<stage>.txt`` and ``sessions.jsonl``."""

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)
        (self.run_dir / "raw").mkdir(parents=True, exist_ok=True)

    def raw(self, participant_id: int, stage: str, text: str) -> None:
        (self.run_dir / "raw" / f"{participant_id}_{stage}.txt").write_text(text, encoding="utf-8")

    def finish(self, manifest: RunManifest, records: Sequence[dict[str, Any]]) -> None:
        with open(self.run_dir / "sessions.jsonl", "w", encoding="utf-8", newline="\n") as f:
            for rec in records:
                f.write(dump_line(rec) + "\n")
        (self.run_dir / "manifest.json").write_text(
            json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def load_run(run_dir: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    with open(run_dir / "sessions.jsonl", encoding="utf-8") as f:
        sessions = [json.loads(line) for line in f if line.strip()]
    return manifest, sessions
