"""Yes/No logits, prompt templates and the cached confidence scorer."""

from __future__ import annotations

import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

from PIL import Image

from zoomeye.errors import ContractError, ExtractionError
from zoomeye.geometry import TreeNode
from zoomeye.visual import InputMode, VisualInput, compose_visual_input

log = logging.getLogger(__name__)

# Largest double strictly below 1; keeps the ratio inside the open interval.
_BELOW_ONE = math.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class YesNoLogits:
    z_yes: float
    z_no: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.z_yes) and math.isfinite(self.z_no)):
            raise ContractError(f"logits must be finite, got ({self.z_yes}, {self.z_no})")


def logits_ratio(logits: YesNoLogits) -> float:
    """Map Yes/No logits to ``(softmax[yes] - 0.5) * 2`` in (-1, 1).

    Evaluated with the larger logit subtracted first, i.e. in terms of
    ``exp(-|d|)`` where ``d = z_yes - z_no``; ``expm1`` keeps precision
    when the two logits are close.
    """
    d = logits.z_yes - logits.z_no
    e = math.exp(-abs(d))
    z = -math.expm1(-abs(d)) / (1.0 + e)
    z = min(z, _BELOW_ONE)
    return z if d >= 0 else -z


class PromptKind(str, enum.Enum):
    EXISTING = "existing"
    LATENT = "latent"
    ANSWERING = "answering"
    CUE_GENERATION = "cue_generation"
    FINAL_ANSWER = "final_answer"


SCORED_KINDS = (PromptKind.EXISTING, PromptKind.LATENT, PromptKind.ANSWERING)


@dataclass(frozen=True)
class Prompt:
    """A rendered prompt plus the structured subject it was rendered from."""

    kind: PromptKind
    subject: str
    text: str

    def __post_init__(self) -> None:
        if not self.subject.strip():
            raise ContractError(f"{self.kind.value} prompt needs a non-empty subject")


_ANSWERING = (
    "Question: {q}\nCould you answer the question based on the available visual information? "
    "Answer Yes or No."
)

DEFAULT_TEMPLATES: dict[InputMode, dict[PromptKind, str]] = {
    InputMode.LOCAL: {
        PromptKind.EXISTING: "Is there a {o} in the image? Answer Yes or No.",
        PromptKind.LATENT: (
            "According to your common sense knowledge and the content of the image, "
            "is it possible to find a {o} in the image? Answer Yes or No and tell the reason."
        ),
        PromptKind.ANSWERING: _ANSWERING,
        PromptKind.CUE_GENERATION: "{q}",
        PromptKind.FINAL_ANSWER: "{q}",
    },
    InputMode.GLOBAL_LOCAL: {
        PromptKind.EXISTING: "Is there a {o} in the zoomed-in view? Answer Yes or No.",
        PromptKind.LATENT: (
            "According to your common sense knowledge and the content of the zoomed-in view, "
            "along with its location in the image, is it possible to find a {o} by further "
            "zooming in the current view? Answer Yes or No and tell the reason."
        ),
        PromptKind.ANSWERING: _ANSWERING,
        PromptKind.CUE_GENERATION: "{q}",
        PromptKind.FINAL_ANSWER: "{q}",
    },
}


@dataclass
class PromptTemplates:
    templates: dict[InputMode, dict[PromptKind, str]] = field(
        default_factory=lambda: {m: dict(t) for m, t in DEFAULT_TEMPLATES.items()}
    )

    def __post_init__(self) -> None:
        for mode, table in self.templates.items():
            for kind, text in table.items():
                holes = text.count("{o}") + text.count("{q}")
                if holes != 1:
                    raise ContractError(f"template {mode.value}/{kind.value} must have one placeholder: {text!r}")

    def render(self, kind: PromptKind, subject: str, mode: InputMode) -> Prompt:
        template = self.templates[mode][kind]
        hole = "{o}" if "{o}" in template else "{q}"
        text = template.replace(hole, subject)
        return Prompt(kind, subject, text)


@runtime_checkable
class OracleBackend(Protocol):
    """What the search needs from a multimodal model."""

    def yes_no(self, visual_input: VisualInput, prompt: Prompt) -> YesNoLogits: ...

    def generate(
        self,
        visual_input: VisualInput | None,
        prompt: Prompt,
        history: Sequence[tuple[str, str]] = (),
    ) -> str: ...


class ConfidenceScorer:
    """Per-search confidence cache in front of a backend.

    Scores are stored on ``node.scores`` keyed by ``(kind, subject)``, so a
    node is queried at most once per kind and subject. Concurrent fills of
    the same key may both hit the backend; they write the same value.
    """

    def __init__(
        self,
        backend: OracleBackend,
        image: Image.Image,
        mode: InputMode,
        templates: PromptTemplates | None = None,
        source: str = "",
    ):
        self.backend = backend
        self.image = image
        self.mode = mode
        self.templates = templates or PromptTemplates()
        self.source = source
        self.calls = 0
        self.extraction_failures = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.calls += 1

    def confidence(self, node: TreeNode, kind: PromptKind, subject: str) -> float:
        if kind not in SCORED_KINDS:
            raise ContractError(f"{kind.value} is not a confidence prompt")
        key = (kind.value, subject)
        cached = node.scores.get(key)
        if cached is not None:
            return cached
        visual = compose_visual_input(self.image, node, self.mode, source=self.source)
        prompt = self.templates.render(kind, subject, self.mode)
        self._count()
        try:
            z = logits_ratio(self.backend.yes_no(visual, prompt))
        except ExtractionError as exc:
            log.warning("node %d %s(%r): %s; scoring as 0", node.id, kind.value, subject, exc)
            with self._lock:
                self.extraction_failures += 1
            z = 0.0
        node.scores[key] = z
        return z

    def generate(
        self,
        visual: VisualInput | None,
        kind: PromptKind,
        subject: str,
        history: Sequence[tuple[str, str]] = (),
    ) -> str:
        prompt = self.templates.render(kind, subject, self.mode)
        self._count()
        return self.backend.generate(visual, prompt, history)
