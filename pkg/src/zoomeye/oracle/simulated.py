"""Deterministic rule-based stand-in for a multimodal model.

The simulator only looks at view geometry. A target counts as *visible*
in a view when at least half of it lies inside the view and it occupies
at least ``rho`` of the view's area (smaller objects are lost when the
view is downsampled). Latent queries say yes whenever the view merely
intersects a matching target, since zooming could still reveal it.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from zoomeye.errors import ContractError, UnknownLabelError
from zoomeye.geometry import BBox, coverage
from zoomeye.oracle.base import Prompt, PromptKind, YesNoLogits
from zoomeye.visual import VisualInput

BASE_LOGIT = 2.0
_SUFFIX = re.compile(r"\s*#\d+$")
_OPTION = re.compile(r"^\s*([A-Z])[.)]\s*(.+?)\s*$")


@dataclass(frozen=True)
class Target:
    label: str
    bbox: BBox
    attribute: str = ""

    @property
    def category(self) -> str:
        """Label without an instance suffix: ``"car #2"`` -> ``"car"``."""
        return _SUFFIX.sub("", self.label).strip().lower()

    def names(self) -> set[str]:
        cat = self.category
        return {self.label.lower(), cat, cat + "s", cat + "es"}


@dataclass
class SceneSpec:
    width: int
    height: int
    targets: list[Target]
    rho: float = 0.005
    epsilon: float = 0.0
    seed: int = 0
    image: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ContractError("scene canvas must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        labels = [t.label for t in self.targets]
        if len(set(labels)) != len(labels):
            raise ContractError(f"scene labels must be unique: {labels}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = [
            {"label": t.label, "bbox": list(t.bbox.as_tuple()), "attribute": t.attribute} for t in self.targets
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        targets = [Target(t["label"], BBox.from_sequence(t["bbox"]), t.get("attribute", "")) for t in d["targets"]]
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            targets=targets,
            rho=float(d.get("rho", 0.005)),
            epsilon=float(d.get("epsilon", 0.0)),
            seed=int(d.get("seed", 0)),
            image=d.get("image", ""),
            meta=dict(d.get("meta", {})),
        )

    @classmethod
    def load(cls, path: str | Path) -> SceneSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- label resolution -------------------------------------------------

    def targets_for_cue(self, cue: str) -> list[Target]:
        name = cue.strip().lower()
        if name.startswith("all "):
            name = name[4:].strip()
        hits = [t for t in self.targets if name in t.names()]
        if not hits:
            raise UnknownLabelError(f"cue {cue!r} matches no target in scene")
        return hits

    def targets_in_text(self, text: str) -> list[Target]:
        """Targets whose label or category (singular or plural) occurs as a phrase in ``text``."""
        low = text.lower()
        hits = []
        for t in self.targets:
            if any(re.search(rf"\b{re.escape(n)}\b", low) for n in t.names()):
                hits.append(t)
        return hits

    def visible(self, target: Target, view: BBox) -> bool:
        return coverage(target.bbox, view) >= 0.5 and target.bbox.area / view.area >= self.rho


def _unit_pair(*parts: object) -> tuple[float, float]:
    blob = "|".join(repr(p) for p in parts).encode()
    a, b = struct.unpack(">QQ", hashlib.sha256(blob).digest()[:16])
    return a / 2**64, b / 2**64


def simulated_yes_no(scene: SceneSpec, view: BBox, kind: PromptKind, subject: str) -> YesNoLogits:
    if kind is PromptKind.EXISTING:
        yes = any(scene.visible(t, view) for t in scene.targets_for_cue(subject))
    elif kind is PromptKind.LATENT:
        yes = any(t.bbox.intersects(view) for t in scene.targets_for_cue(subject))
    elif kind is PromptKind.ANSWERING:
        refs = scene.targets_in_text(subject)
        if not refs:
            raise UnknownLabelError(f"question {subject!r} references no target in scene")
        yes = all(scene.visible(t, view) for t in refs)
    else:
        raise ContractError(f"{kind.value} is not a yes/no query")
    z_yes, z_no = (BASE_LOGIT, -BASE_LOGIT) if yes else (-BASE_LOGIT, BASE_LOGIT)
    if scene.epsilon > 0:
        u1, u2 = _unit_pair(scene.seed, view.as_tuple(), kind.value, subject)
        z_yes += (2 * u1 - 1) * scene.epsilon
        z_no += (2 * u2 - 1) * scene.epsilon
    return YesNoLogits(z_yes, z_no)


def parse_options(text: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(2)) for m in map(_OPTION.match, text.splitlines()) if m]


class SimulatedBackend:
    """Oracle backend answering from a :class:`SceneSpec`.

    ``always_no`` forces every yes/no query negative and every answer to a
    guess, which models a backend that never perceives anything.
    """

    def __init__(self, scene: SceneSpec, always_no: bool = False):
        self.scene = scene
        self.always_no = always_no

    @property
    def cache_namespace(self) -> str:
        return f"sim:{self.scene.digest()}:{int(self.always_no)}"

    def yes_no(self, visual_input: VisualInput, prompt: Prompt) -> YesNoLogits:
        logits = simulated_yes_no(self.scene, visual_input.bbox, prompt.kind, prompt.subject)
        if self.always_no:
            return YesNoLogits(-abs(logits.z_yes), abs(logits.z_no))
        return logits

    def generate(
        self,
        visual_input: VisualInput | None,
        prompt: Prompt,
        history: Sequence[tuple[str, str]] = (),
    ) -> str:
        if prompt.kind is PromptKind.CUE_GENERATION:
            return self._cue_reply(prompt.subject)
        return self._answer(visual_input, prompt.subject)

    def _cue_reply(self, question: str) -> str:
        low = question.lower()
        found: list[tuple[int, str]] = []
        seen: set[str] = set()
        for t in self.scene.targets:
            cat = t.category
            plural = re.search(rf"\b{re.escape(cat)}e?s\b", low)
            if plural and cat not in seen:
                seen.add(cat)
                found.append((plural.start(), "all " + plural.group(0)))
                continue
            m = re.search(rf"\b{re.escape(t.label.lower())}\b", low)
            if m and not plural:
                found.append((m.start(), t.label))
        if not found:
            return "I am not sure which objects are needed."
        names = [name for _, name in sorted(found)]
        joined = " and ".join(names)
        return (
            f"To answer the question, I need know the location of {joined} so that I can answer it. "
            f"So I need the information about the following objects: {joined}."
        )

    def _answer(self, visual_input: VisualInput | None, question: str) -> str:
        options = parse_options(question)
        refs = self.scene.targets_in_text(question.splitlines()[0] if question else question)
        view = visual_input.bbox if visual_input is not None else BBox.full()
        truth = None
        if refs and not self.always_no and all(self.scene.visible(t, view) for t in refs):
            if question.lower().startswith("how many"):
                truth = str(len(refs))
            else:
                truth = refs[0].attribute
        if options:
            for letter, text in options:
                if truth is not None and text.strip().lower() == truth.lower():
                    return f"{letter}. {text}"
            u, _ = _unit_pair(self.scene.seed, "guess", question, view.as_tuple())
            letter, text = options[int(u * len(options))]
            return f"{letter}. {text}"
        return truth if truth is not None else "I cannot tell."
