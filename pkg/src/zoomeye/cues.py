"""Visual cue generation, parsing and classification."""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from zoomeye.errors import ContractError, CueParseError
from zoomeye.oracle.base import ConfidenceScorer, OracleBackend, Prompt, PromptKind

log = logging.getLogger(__name__)

MARKER = "following objects:"
APPEARANCE_TEMPLATE = "What is the appearance of the {o}?"
LOCATION_TEMPLATE = "What is the location of the {o}?"

_ALL_PREFIX = re.compile(r"^all\s", re.IGNORECASE)
_SPLIT = re.compile(r"\s*,\s*(?:and\s+)?|\s+and\s+", re.IGNORECASE)
_TRAILING = ".!?;:\"'"


class CueKind(str, enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"


def classify_cue(text: str) -> CueKind:
    """Type-2 ("find every instance") iff the cue starts with the word "all"."""
    if not text.strip():
        raise ContractError("cue text must be non-empty")
    return CueKind.TYPE2 if _ALL_PREFIX.match(text.strip()) else CueKind.TYPE1


@dataclass(frozen=True)
class VisualCue:
    text: str
    kind: CueKind

    @classmethod
    def of(cls, text: str) -> VisualCue:
        text = text.strip()
        return cls(text, classify_cue(text))

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ContractError("cue text must be non-empty")


@dataclass(frozen=True)
class CuePromptSet:
    """In-context (question, reply) pairs that prefix the cue request."""

    examples: tuple[tuple[str, str], ...]
    profile: str = "custom"

    def __post_init__(self) -> None:
        if not self.examples:
            raise ContractError("a cue prompt set needs at least one example pair")

    @classmethod
    def from_dict(cls, d: dict) -> CuePromptSet:
        pairs = tuple((e["user"], e["assistant"]) for e in d["examples"])
        return cls(pairs, d.get("profile", "custom"))

    @classmethod
    def load(cls, path: str | Path) -> CuePromptSet:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def builtin(cls, profile: str = "vstar") -> CuePromptSet:
        name = {"vstar": "icl_vstar.json", "hrbench": "icl_hrbench.json"}.get(profile)
        if name is None:
            raise ContractError(f"unknown cue profile {profile!r}; expected 'vstar' or 'hrbench'")
        text = resources.files("zoomeye.data").joinpath(name).read_text()
        return cls.from_dict(json.loads(text))


def parse_cues(reply: str) -> list[VisualCue]:
    """Extract cues from the text after the last "following objects:" marker."""
    idx = reply.lower().rfind(MARKER)
    if idx < 0:
        raise CueParseError(f"no {MARKER!r} marker in reply: {reply[:120]!r}")
    tail = reply[idx + len(MARKER):].strip().splitlines()
    tail = tail[0] if tail else ""
    cues = []
    for part in _SPLIT.split(tail):
        part = part.strip().strip(_TRAILING).strip()
        if part:
            cues.append(VisualCue.of(part))
    if not cues:
        raise CueParseError(f"no cues after marker in reply: {reply[:120]!r}")
    return cues


def generate_cues(
    question: str,
    backend: OracleBackend | ConfidenceScorer,
    prompt_set: CuePromptSet | None = None,
) -> list[VisualCue]:
    """Ask the model for cues; raises :class:`CueParseError` on an unusable reply."""
    prompt_set = prompt_set or CuePromptSet.builtin()
    if isinstance(backend, ConfidenceScorer):
        reply = backend.generate(None, PromptKind.CUE_GENERATION, question, prompt_set.examples)
    else:
        reply = backend.generate(None, Prompt(PromptKind.CUE_GENERATION, question, question), prompt_set.examples)
    return parse_cues(reply)


def cues_or_fallback(
    question: str,
    backend: OracleBackend | ConfidenceScorer,
    prompt_set: CuePromptSet | None = None,
) -> tuple[list[VisualCue], bool]:
    """Like :func:`generate_cues`, but falls back to the whole question as one type-1 cue.

    Returns the cues and whether the fallback was taken.
    """
    try:
        return generate_cues(question, backend, prompt_set), False
    except CueParseError as exc:
        log.warning("cue generation failed (%s); using the question as the cue", exc)
        return [VisualCue(question.strip(), CueKind.TYPE1)], True


def decomposed_question(cue: VisualCue | str, template: str = APPEARANCE_TEMPLATE) -> str:
    text = cue.text if isinstance(cue, VisualCue) else cue
    if not text.strip():
        raise ContractError("cannot build a question for an empty cue")
    if "{o}" not in template:
        raise ContractError(f"template needs an {{o}} placeholder: {template!r}")
    return template.replace("{o}", text.strip())
