"""Background-knowledge presets and prompt assembly."""

from __future__ import annotations

import json
import string
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, fields
from enum import Enum
from importlib import resources
from pathlib import Path

from phqscreen.errors import (
    ConfigError,
    MissingDocument,
    ScoreOutOfRange,
    TemplateError,
    TokenBudgetExceeded,
    UnknownPreset,
)
from phqscreen.transcripts import JointDialogue, Tokenizer, resolve_tokenizer


class DocKind(str, Enum):
    PHQ8_CRITERIA = "phq8"
    DSM5_CRITERIA = "dsm5"
    DATA_DESCRIPTION = "data-description"
    TRAINING_EXAMPLES = "training-examples"


DEFAULT_TITLES = {
    DocKind.PHQ8_CRITERIA: "PHQ-8 Criteria",
    DocKind.DSM5_CRITERIA: "DSM-5 Criteria",
    DocKind.DATA_DESCRIPTION: "Data Description",
    DocKind.TRAINING_EXAMPLES: "Training Examples",
}

PRESETS: dict[str, frozenset[DocKind]] = {
    "no-background": frozenset(),
    "phq8": frozenset({DocKind.PHQ8_CRITERIA}),
    "dsm5": frozenset({DocKind.DSM5_CRITERIA}),
    "dsm5-phq8": frozenset({DocKind.DSM5_CRITERIA, DocKind.PHQ8_CRITERIA}),
    "enhanced": frozenset(DocKind),
}

# Rendering order of attached documents.
DOC_ORDER = (
    DocKind.DSM5_CRITERIA,
    DocKind.PHQ8_CRITERIA,
    DocKind.DATA_DESCRIPTION,
    DocKind.TRAINING_EXAMPLES,
)

DEFAULT_CONTEXT_LIMIT = 128_000
DEFAULT_BATCH_LIMIT = 50


@dataclass(frozen=True)
class KnowledgeDoc:
    kind: DocKind
    title: str
    body: str
    source_path: str = ""

    def __post_init__(self):
        if not self.body.strip():
            raise MissingDocument(f"{self.kind.value} document is empty ({self.source_path})")


@dataclass(frozen=True)
class BackgroundConfig:
    name: str
    docs: tuple[KnowledgeDoc, ...] = ()

    def __post_init__(self):
        kinds = [d.kind for d in self.docs]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"duplicate document kinds in config {self.name!r}")
        object.__setattr__(
            self, "docs", tuple(sorted(self.docs, key=lambda d: DOC_ORDER.index(d.kind)))
        )

    @property
    def kinds(self) -> frozenset[DocKind]:
        return frozenset(d.kind for d in self.docs)


def _render_training_examples(path: Path) -> str:
    """Few-shot blocks from a JSON-lines file of ``{"excerpt", "label"}`` objects."""
    blocks = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
            excerpt, label = item["excerpt"], item["label"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MissingDocument(f"{path}:{i}: bad training example ({exc})") from exc
        blocks.append(f"Example {len(blocks) + 1}\nDialogue: {excerpt}\nAssessment: {label}")
    return "\n\n".join(blocks)


def load_doc(kind: DocKind | str, path: str | Path, title: str | None = None) -> KnowledgeDoc:
    kind = DocKind(kind)
    path = Path(path)
    if not path.is_file():
        raise MissingDocument(f"{kind.value} document not found: {path}")
    if kind is DocKind.TRAINING_EXAMPLES and path.suffix == ".jsonl":
        body = _render_training_examples(path)
    else:
        body = path.read_text(encoding="utf-8").strip()
    return KnowledgeDoc(kind, title or DEFAULT_TITLES[kind], body, str(path))


def load_config(preset_name: str, doc_paths: Mapping[DocKind | str, str | Path]) -> BackgroundConfig:
    """Build a preset's config, loading exactly the documents it requires.

    Paths for kinds the preset does not use are ignored.
    """
    if preset_name not in PRESETS:
        raise UnknownPreset(f"unknown preset {preset_name!r}; known: {', '.join(PRESETS)}")
    paths = {DocKind(k): v for k, v in doc_paths.items()}
    docs = []
    for kind in sorted(PRESETS[preset_name], key=DOC_ORDER.index):
        if kind not in paths:
            raise MissingDocument(f"preset {preset_name!r} requires a {kind.value} document")
        docs.append(load_doc(kind, paths[kind]))
    return BackgroundConfig(preset_name, tuple(docs))


# -- templates --------------------------------------------------------------

# Placeholders each template must contain; nothing else is allowed.
_PLACEHOLDERS = {
    "system_preamble": {"docs"},
    "task1_instructions": {"participants"},
    "stage1_instructions": {"participants"},
    "stage2_instructions": set(),
    "stage3_instructions": {"external_score"},
    "repair_instructions": {"answer_format"},
}

_TEMPLATE_FILES = {
    "system_preamble": "preamble.txt",
    "task1_instructions": "task1.txt",
    "stage1_instructions": "stage1.txt",
    "stage2_instructions": "stage2.txt",
    "stage3_instructions": "stage3.txt",
    "repair_instructions": "repair.txt",
}


def _placeholders(template: str) -> set[str]:
    try:
        return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}
    except ValueError as exc:
        raise TemplateError(f"unparsable template: {exc}") from exc


@dataclass(frozen=True)
class PromptBundle:
    system_preamble: str
    task1_instructions: str
    stage1_instructions: str
    stage2_instructions: str
    stage3_instructions: str
    repair_instructions: str

    def __post_init__(self):
        for f in fields(self):
            found = _placeholders(getattr(self, f.name))
            expected = _PLACEHOLDERS[f.name]
            if found != expected:
                raise TemplateError(
                    f"{f.name}: placeholders {sorted(found)} do not match {sorted(expected)}"
                )

    @classmethod
    def default(cls) -> PromptBundle:
        pkg = resources.files("phqscreen") / "templates"
        return cls(**{
            name: (pkg / filename).read_text(encoding="utf-8")
            for name, filename in _TEMPLATE_FILES.items()
        })

    @classmethod
    def from_dir(cls, directory: str | Path) -> PromptBundle:
        """Templates from a directory; files that are absent fall back to the defaults."""
        directory = Path(directory)
        if not directory.is_dir():
            raise TemplateError(f"template directory not found: {directory}")
        base = cls.default()
        overrides = {}
        for name, filename in _TEMPLATE_FILES.items():
            path = directory / filename
            if path.is_file():
                overrides[name] = path.read_text(encoding="utf-8")
        return cls(**{**{f.name: getattr(base, f.name) for f in fields(cls)}, **overrides})


def render_docs(cfg: BackgroundConfig) -> str:
    if not cfg.docs:
        return ""
    sections = [f"### {d.title}\n{d.body}" for d in cfg.docs]
    return "\nBackground knowledge:\n\n" + "\n\n".join(sections) + "\n"


def render_system(cfg: BackgroundConfig, bundle: PromptBundle) -> str:
    return bundle.system_preamble.format(docs=render_docs(cfg)).strip()


def participant_block(d: JointDialogue) -> str:
    return f"Participant {d.participant_id}:\n{d.text}"


def _check_budget(prompt: str, context_limit: int, tokenizer: str | Tokenizer) -> None:
    n = resolve_tokenizer(tokenizer)(prompt)
    if n > context_limit:
        raise TokenBudgetExceeded(f"prompt is ~{n} tokens, backend limit is {context_limit}")


def task1_messages(
    cfg: BackgroundConfig,
    bundle: PromptBundle,
    dialogues: Sequence[JointDialogue],
    *,
    batch_limit: int = DEFAULT_BATCH_LIMIT,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
    tokenizer: str | Tokenizer = "approx",
) -> tuple[str, str]:
    """(system, user) message pair for one Task 1 batch."""
    if not 1 <= len(dialogues) <= batch_limit:
        raise ConfigError(f"batch of {len(dialogues)} dialogues outside 1..{batch_limit}")
    system = render_system(cfg, bundle)
    user = bundle.task1_instructions.format(
        participants="\n\n".join(participant_block(d) for d in dialogues)
    ).strip()
    _check_budget(system + "\n\n" + user, context_limit, tokenizer)
    return system, user


def assemble_task1_prompt(cfg, bundle, dialogues, **kwargs) -> str:
    return "\n\n".join(task1_messages(cfg, bundle, dialogues, **kwargs))


def stage1_messages(
    cfg: BackgroundConfig,
    bundle: PromptBundle,
    dialogue: JointDialogue,
    *,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
    tokenizer: str | Tokenizer = "approx",
) -> tuple[str, str]:
    system = render_system(cfg, bundle)
    user = bundle.stage1_instructions.format(participants=participant_block(dialogue)).strip()
    _check_budget(system + "\n\n" + user, context_limit, tokenizer)
    return system, user


def assemble_stage1_prompt(cfg, bundle, dialogue, **kwargs) -> str:
    return "\n\n".join(stage1_messages(cfg, bundle, dialogue, **kwargs))


def assemble_stage2_prompt(bundle: PromptBundle) -> str:
    return bundle.stage2_instructions.format().strip()


def assemble_stage3_prompt(bundle: PromptBundle, external_score: int) -> str:
    if isinstance(external_score, bool) or not isinstance(external_score, int):
        raise ScoreOutOfRange(f"external score must be an integer, got {external_score!r}")
    if not 0 <= external_score <= 24:
        raise ScoreOutOfRange(f"external score {external_score} outside 0..24")
    return bundle.stage3_instructions.format(external_score=external_score).strip()


def assemble_repair_prompt(bundle: PromptBundle, answer_format: str) -> str:
    return bundle.repair_instructions.format(answer_format=answer_format).strip()
