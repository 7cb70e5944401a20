"""Run a dataset through the full pipeline and score it."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from zoomeye.cues import CuePromptSet
from zoomeye.errors import ContractError, TransportError, ZoomEyeError
from zoomeye.harness.dataset import DatasetRecord, read_dataset
from zoomeye.harness.metrics import MetricsReport, RecordOutcome, extract_choice, zoom_success
from zoomeye.oracle.base import OracleBackend
from zoomeye.oracle.cache import CachingBackend, MemoStore
from zoomeye.oracle.simulated import SceneSpec, SimulatedBackend
from zoomeye.search import SearchAborted, SearchConfig, SearchResult, answer_question
from zoomeye.visual import load_image

log = logging.getLogger(__name__)

BackendFactory = Callable[[DatasetRecord, Path], OracleBackend]


def sim_backend_factory(epsilon: float | None = None, always_no: bool = False) -> BackendFactory:
    """Factory loading each record's scene file; ``epsilon`` overrides the scene's noise."""

    def factory(record: DatasetRecord, root: Path) -> OracleBackend:
        if not record.scene:
            raise ContractError(f"record {record.id} has no scene file for the simulated backend")
        scene = SceneSpec.load(root / record.scene)
        if epsilon is not None:
            scene.epsilon = epsilon
        return SimulatedBackend(scene, always_no=always_no)

    return factory


def shared_backend_factory(backend: OracleBackend) -> BackendFactory:
    return lambda record, root: backend


@dataclass
class BenchRun:
    report: MetricsReport
    outcomes: list[RecordOutcome]
    results: list[SearchResult | None]


def _score(record: DatasetRecord, result: SearchResult) -> RecordOutcome:
    predicted = extract_choice(result.answer) if record.options else result.answer
    gold = record.gold_letter if record.options else record.answer
    correct = predicted is not None and gold is not None and predicted.strip().lower() == gold.strip().lower()
    return RecordOutcome(
        id=record.id,
        correct=correct,
        predicted=predicted,
        gold=gold,
        answer=result.answer,
        zoom_success=zoom_success(result.union, record.target_boxes),
        steps=result.steps,
        backend_calls=result.backend_calls,
        union_bbox=list(result.union.as_tuple()),
    )


def run_record(
    record: DatasetRecord,
    root: Path,
    config: SearchConfig,
    factory: BackendFactory,
    prompt_set: CuePromptSet | None = None,
    cues: list[str] | None = None,
    store: MemoStore | None = None,
) -> tuple[RecordOutcome, SearchResult | None]:
    backend = factory(record, root)
    if store is not None:
        backend = CachingBackend(backend, store)
    image_path = root / record.image
    try:
        image = load_image(image_path)
    except OSError as exc:
        log.warning("record %s: cannot read image %s: %s", record.id, image_path, exc)
        return RecordOutcome(id=record.id, correct=False, gold=record.gold_letter, error=f"image: {exc}"), None
    try:
        result = answer_question(
            image,
            record.prompt(),
            config,
            backend,
            cues=cues or record.cues,
            prompt_set=prompt_set,
            source=str(image_path),
            cue_question=record.question,
        )
    except TransportError:
        raise
    except SearchAborted as exc:
        # a dead backend fails every record the same way; stop the run instead
        if isinstance(exc.__cause__, TransportError):
            raise
        log.warning("record %s failed: %s", record.id, exc)
        return RecordOutcome(id=record.id, correct=False, gold=record.gold_letter, error=str(exc)), None
    except ZoomEyeError as exc:
        log.warning("record %s failed: %s", record.id, exc)
        return RecordOutcome(id=record.id, correct=False, gold=record.gold_letter, error=str(exc)), None
    return _score(record, result), result


def run_bench(
    dataset: str | Path,
    config: SearchConfig,
    factory: BackendFactory,
    out_dir: str | Path | None = None,
    parallel: int = 1,
    prompt_set: CuePromptSet | None = None,
    cues: list[str] | None = None,
    store: MemoStore | None = None,
    timing: bool = False,
) -> BenchRun:
    """Run every record; write ``report.json``, ``results.jsonl`` and ``traces/`` when ``out_dir`` is set.

    Records may run concurrently; outputs are assembled in dataset order
    so files are byte-stable across runs.
    """
    dataset = Path(dataset)
    records, skipped = read_dataset(dataset)
    root = dataset.parent

    def one(rec: DatasetRecord) -> tuple[RecordOutcome, SearchResult | None]:
        return run_record(rec, root, config, factory, prompt_set, cues, store)

    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            pairs = list(pool.map(one, records))
    else:
        pairs = [one(r) for r in records]

    outcomes = [p[0] for p in pairs]
    results = [p[1] for p in pairs]
    report = MetricsReport.from_outcomes(outcomes, skipped=len(skipped))
    if out_dir is not None:
        write_outputs(Path(out_dir), report, outcomes, results, timing)
    return BenchRun(report, outcomes, results)


def write_outputs(
    out: Path,
    report: MetricsReport,
    outcomes: list[RecordOutcome],
    results: list[SearchResult | None],
    timing: bool = False,
) -> None:
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")
    for o, r in zip(outcomes, results):
        if r is not None:
            (traces / f"{o.id}.json").write_text(json.dumps(r.to_dict(timing), indent=2, sort_keys=True) + "\n")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
