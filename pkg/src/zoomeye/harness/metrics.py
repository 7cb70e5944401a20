"""Answer scoring, zoom success and aggregate reports."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

from zoomeye.geometry import BBox, coverage

ZOOM_SUCCESS_COVERAGE = 0.5
_LETTER = re.compile(r"\b([A-D])\b")


def extract_choice(text: str | None) -> str | None:
    """First standalone option letter A-D in a generated answer."""
    if not text:
        return None
    m = _LETTER.search(text)
    return m.group(1) if m else None


def zoom_success(union: BBox, gold_boxes: Sequence[BBox]) -> bool | None:
    """True iff the searched box covers at least half of every gold box.

    ``None`` when there are no gold boxes to score against.
    """
    if not gold_boxes:
        return None
    return all(coverage(g, union) >= ZOOM_SUCCESS_COVERAGE for g in gold_boxes)


@dataclass
class RecordOutcome:
    id: str
    correct: bool
    predicted: str | None = None
    gold: str | None = None
    answer: str | None = None
    zoom_success: bool | None = None
    steps: int = 0
    backend_calls: int = 0
    union_bbox: list[float] | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


@dataclass
class MetricsReport:
    total: int
    correct: int
    accuracy: float
    zoom_scored: int = 0
    zoom_successes: int = 0
    zoom_success_rate: float | None = None
    accuracy_given_success: float | None = None
    accuracy_given_failure: float | None = None
    mean_steps: float = 0.0
    mean_backend_calls: float = 0.0
    errors: int = 0
    skipped: int = 0
    curve: list[dict] = field(default_factory=list)

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[RecordOutcome], skipped: int = 0) -> MetricsReport:
        total = len(outcomes)
        correct = sum(o.correct for o in outcomes)
        scored = [o for o in outcomes if o.zoom_success is not None]
        hits = [o for o in scored if o.zoom_success]
        misses = [o for o in scored if not o.zoom_success]
        return cls(
            total=total,
            correct=correct,
            accuracy=_pct(correct, total) or 0.0,
            zoom_scored=len(scored),
            zoom_successes=len(hits),
            zoom_success_rate=_pct(len(hits), len(scored)),
            accuracy_given_success=_pct(sum(o.correct for o in hits), len(hits)),
            accuracy_given_failure=_pct(sum(o.correct for o in misses), len(misses)),
            mean_steps=sum(o.steps for o in outcomes) / total if total else 0.0,
            mean_backend_calls=sum(o.backend_calls for o in outcomes) / total if total else 0.0,
            errors=sum(o.error is not None for o in outcomes),
            skipped=skipped,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        def fmt(v: float | None) -> str:
            return "n/a" if v is None else f"{v:.2f}%"

        return (
            f"accuracy {fmt(self.accuracy)} ({self.correct}/{self.total}), "
            f"zoom success {fmt(self.zoom_success_rate)}, "
            f"acc|success {fmt(self.accuracy_given_success)}, acc|failure {fmt(self.accuracy_given_failure)}, "
            f"mean steps {self.mean_steps:.2f}, mean calls {self.mean_backend_calls:.2f}, "
            f"errors {self.errors}, skipped {self.skipped}"
        )
