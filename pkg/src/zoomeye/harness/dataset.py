"""JSON-lines benchmark records."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from zoomeye.errors import ContractError
from zoomeye.geometry import BBox

log = logging.getLogger(__name__)

LETTERS = "ABCDEFGH"


@dataclass
class DatasetRecord:
    image: str
    question: str
    answer: str
    options: list[str] = field(default_factory=list)
    target_boxes: list[BBox] = field(default_factory=list)
    id: str = ""
    scene: str | None = None
    cues: list[str] | None = None

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ContractError("record question must be non-empty")
        if len(self.options) > len(LETTERS):
            raise ContractError(f"at most {len(LETTERS)} options supported")
        if self.options and self.answer not in self.options and self.answer not in self.option_letters:
            raise ContractError(f"gold answer {self.answer!r} is not one of the options")

    @property
    def option_letters(self) -> list[str]:
        return list(LETTERS[: len(self.options)])

    @property
    def gold_letter(self) -> str | None:
        if not self.options:
            return None
        if self.answer in self.options:
            return LETTERS[self.options.index(self.answer)]
        return self.answer

    def prompt(self) -> str:
        """Question text with lettered options, as sent for searching and answering."""
        if not self.options:
            return self.question
        lines = [self.question] + [f"{l}. {o}" for l, o in zip(LETTERS, self.options)]
        lines.append("Answer with the option's letter from the given choices directly.")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "image": self.image,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
            "target_boxes": [list(b.as_tuple()) for b in self.target_boxes],
        }
        if self.scene is not None:
            d["scene"] = self.scene
        if self.cues is not None:
            d["cues"] = list(self.cues)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DatasetRecord:
        return cls(
            image=str(d["image"]),
            question=str(d["question"]),
            answer=str(d["answer"]),
            options=[str(o) for o in d.get("options") or []],
            target_boxes=[BBox.from_sequence(b) for b in d.get("target_boxes") or []],
            id=str(d.get("id", "")),
            scene=d.get("scene"),
            cues=d.get("cues"),
        )


def read_dataset(path: str | Path) -> tuple[list[DatasetRecord], list[str]]:
    """Parse a JSON-lines dataset.

    Malformed lines are skipped with a warning; the second return value
    lists one message per skipped line. Raises if nothing usable remains.
    """
    path = Path(path)
    records: list[DatasetRecord] = []
    skipped: list[str] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = DatasetRecord.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            msg = f"{path.name}:{lineno}: {exc}"
            log.warning("skipping malformed record %s", msg)
            skipped.append(msg)
            continue
        if not rec.id:
            rec.id = f"rec{lineno:05d}"
        records.append(rec)
    if not records:
        raise ContractError(f"dataset {path} has no usable records")
    return records, skipped


def write_dataset(records: list[DatasetRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
