"""Confidence-guided tree search over image patches.

Type-1 cues ("the dog") run a best-first search that stops as soon as the
model says the current view answers the question, lowering the answering
threshold over time. Type-2 cues ("all dogs") sweep the shallow levels of
the tree and keep every patch where the cue is clearly visible.
"""

from __future__ import annotations

import dataclasses
import heapq
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from PIL import Image

from zoomeye.cues import (
    APPEARANCE_TEMPLATE,
    CueKind,
    CuePromptSet,
    VisualCue,
    cues_or_fallback,
    decomposed_question,
)
from zoomeye.errors import ContractError, ZoomEyeError
from zoomeye.geometry import BBox, ImageTree, TreeNode, pixel_rect, union_bbox
from zoomeye.oracle.base import ConfidenceScorer, OracleBackend, PromptKind, PromptTemplates
from zoomeye.visual import InputMode, VisualInput, compose_visual_input, image_meta

log = logging.getLogger(__name__)

PROSE = "prose"
ALG2_LITERAL = "alg2-literal"
CONVENTIONS = (PROSE, ALG2_LITERAL)

# encoder input side per mode, used as the leaf size when s_min is unset
DEFAULT_S_MIN = {InputMode.LOCAL: 336, InputMode.GLOBAL_LOCAL: 384}


@dataclass
class SearchConfig:
    tau: float = 0.6
    tau2: float = 0.8
    tau_min: float = 0.0
    delta: int = 2
    step_factor: int = 3
    decay: float = 0.1
    bias: float = 0.6
    grid: int = 2
    mode: InputMode = InputMode.GLOBAL_LOCAL
    s_min: int | None = None
    max_type2_depth: int = 2
    paste_threshold: int = 1000
    parallel: int = 1
    weight_convention: str = PROSE
    max_steps: int | None = None
    decomposed_template: str = APPEARANCE_TEMPLATE

    def __post_init__(self) -> None:
        self.mode = InputMode.parse(self.mode)
        if not self.tau_min < self.tau < 1.0:
            raise ContractError(f"tau must lie in (tau_min, 1), got {self.tau} with tau_min={self.tau_min}")
        if not 0.0 < self.tau2 < 1.0:
            raise ContractError(f"tau2 must lie in (0, 1), got {self.tau2}")
        if self.delta < 1 or self.step_factor < 1:
            raise ContractError("delta and step_factor must be >= 1")
        if not 0.0 <= self.bias <= 1.0:
            raise ContractError(f"bias must lie in [0, 1], got {self.bias}")
        if self.grid < 2:
            raise ContractError(f"grid must be >= 2, got {self.grid}")
        if self.decay <= 0:
            raise ContractError("decay must be positive")
        if self.weight_convention not in CONVENTIONS:
            raise ContractError(f"weight_convention must be one of {CONVENTIONS}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ContractError("max_steps must be >= 1")
        if self.parallel < 1:
            raise ContractError("parallel must be >= 1")

    @classmethod
    def local(cls, **overrides: Any) -> SearchConfig:
        return cls(**{"tau": 0.8, "bias": 0.2, "mode": InputMode.LOCAL, **overrides})

    @classmethod
    def global_local(cls, **overrides: Any) -> SearchConfig:
        return cls(**{"tau": 0.6, "bias": 0.6, "mode": InputMode.GLOBAL_LOCAL, **overrides})

    @classmethod
    def for_mode(cls, mode: InputMode | str, **overrides: Any) -> SearchConfig:
        if InputMode.parse(mode) is InputMode.LOCAL:
            return cls.local(**overrides)
        return cls.global_local(**overrides)

    @property
    def leaf_side(self) -> int:
        return self.s_min if self.s_min is not None else DEFAULT_S_MIN[self.mode]

    def step_threshold(self, max_depth: int) -> int:
        return max_depth * self.step_factor

    def replace(self, **changes: Any) -> SearchConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SearchConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# -- ranking ---------------------------------------------------------------


def weight(depth: int, max_depth: int, bias: float) -> float:
    """Depth weight ``(1 - b) / D**2 * d**2 + b``; rises from ``b`` at the root to 1 at the leaves."""
    if max_depth < 1 or not 0 <= depth <= max_depth:
        raise ContractError(f"depth {depth} outside [0, {max_depth}]")
    return (1.0 - bias) / max_depth**2 * depth**2 + bias


def blend_priority(c_e: float, c_l: float, alpha: float, convention: str = PROSE) -> float:
    if convention == PROSE:
        return alpha * c_e + (1.0 - alpha) * c_l
    if convention == ALG2_LITERAL:
        return alpha * c_l + (1.0 - alpha) * c_e
    raise ContractError(f"unknown weight convention {convention!r}")


def node_priority(
    node: TreeNode, cue: str, config: SearchConfig, scorer: ConfidenceScorer, max_depth: int
) -> float:
    key = (f"priority/{config.weight_convention}/{config.bias!r}", cue)
    cached = node.scores.get(key)
    if cached is not None:
        return cached
    c_e = scorer.confidence(node, PromptKind.EXISTING, cue)
    c_l = scorer.confidence(node, PromptKind.LATENT, cue)
    alpha = weight(node.depth, max_depth, config.bias)
    value = blend_priority(c_e, c_l, alpha, config.weight_convention)
    node.scores[key] = value
    return value


def rank_frontier(frontier: Sequence[tuple[TreeNode, float]]) -> list[TreeNode]:
    """Highest priority first; equal priorities go to the lower id."""
    return [node for node, _ in sorted(frontier, key=lambda item: (-item[1], item[0].id))]


# -- stopping and decay ------------------------------------------------------


def stopping(node: TreeNode, question: str, tau: float, scorer: ConfidenceScorer) -> bool:
    if not question.strip():
        raise ContractError("stopping needs a non-empty question")
    return scorer.confidence(node, PromptKind.ANSWERING, question) >= tau


def decay_schedule(
    count: int,
    tau: float,
    threshold: int,
    delta: int,
    tau_min: float,
    decrement: float = 0.1,
) -> tuple[float, int, bool]:
    """One decay check, run right after the step counter is incremented.

    Returns ``(tau, threshold, abort)``. Thresholds are rounded to 10
    decimals so repeated 0.1 decrements land on 0.5, 0.4, ... exactly.
    """
    if count < threshold:
        return tau, threshold, False
    tau = round(tau - decrement, 10)
    return tau, threshold + delta, tau < tau_min


# -- traces ----------------------------------------------------------------


@dataclass
class TraceStep:
    step: int
    node_id: int
    depth: int
    bbox: BBox
    tau: float
    c_e: float | None = None
    c_l: float | None = None
    priority: float | None = None
    c_a: float | None = None
    best_id: int | None = None
    decayed: bool = False
    aborted: bool = False

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bbox"] = list(self.bbox.as_tuple())
        return d


@dataclass
class SearchTrace:
    cue: str
    kind: CueKind
    question: str | None = None
    steps: list[TraceStep] = field(default_factory=list)
    result_ids: list[int] = field(default_factory=list)
    via: str = ""
    fallback: bool = False
    reason: str = ""
    tau_final: float | None = None
    backend_calls: int = 0
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "cue": self.cue,
            "kind": self.kind.value,
            "question": self.question,
            "steps": [s.to_dict() for s in self.steps],
            "outcome": {
                "result_ids": list(self.result_ids),
                "via": self.via,
                "fallback": self.fallback,
                "reason": self.reason,
                "tau_final": self.tau_final,
            },
            "backend_calls": self.backend_calls,
        }
        if self.error:
            d["error"] = self.error
        if timing:
            d["wall_time"] = self.wall_time
        return d


class SearchAborted(ZoomEyeError):
    """A backend error stopped a search; the partial trace is attached."""

    def __init__(self, message: str, trace: SearchTrace):
        super().__init__(message)
        self.trace = trace


def _score_children(
    kids: list[TreeNode],
    fn,
    pool: ThreadPoolExecutor | None,
) -> list[float]:
    if pool is None or len(kids) < 2:
        return [fn(k) for k in kids]
    return list(pool.map(fn, kids))


def _record(trace: SearchTrace, node: TreeNode, step: int, tau: float, cue: str, scorer: ConfidenceScorer) -> TraceStep:
    s = TraceStep(
        step=step,
        node_id=node.id,
        depth=node.depth,
        bbox=node.bbox,
        tau=tau,
        c_e=node.scores.get((PromptKind.EXISTING.value, cue)),
        c_l=node.scores.get((PromptKind.LATENT.value, cue)),
    )
    trace.steps.append(s)
    return s


def search_type1(
    tree: ImageTree,
    cue: VisualCue | str,
    question: str,
    config: SearchConfig,
    scorer: ConfidenceScorer,
) -> tuple[TreeNode, SearchTrace]:
    """Best-first search for a single instance of ``cue``.

    Returns the first popped node whose answering confidence reaches the
    (decaying) threshold, or the best node seen so far if that one
    qualifies instead. When the threshold drops below ``tau_min``, the
    frontier empties, or ``max_steps`` is hit, the best node is returned
    with ``trace.fallback`` set.
    """
    cue_text = cue.text if isinstance(cue, VisualCue) else cue
    trace = SearchTrace(cue=cue_text, kind=CueKind.TYPE1, question=question)
    calls_before = scorer.calls
    started = time.perf_counter()
    depth_max = tree.max_depth
    threshold = config.step_threshold(depth_max)
    tau = config.tau
    count = 0
    root = tree.root
    best = root

    def prio(n: TreeNode) -> float:
        return node_priority(n, cue_text, config, scorer, depth_max)

    pool = ThreadPoolExecutor(config.parallel) if config.parallel > 1 else None
    try:
        prio(root)  # recorded for the trace; the root is never ranked
        frontier: list[tuple[float, int, TreeNode]] = [(0.0, root.id, root)]
        result: TreeNode | None = None
        trace.reason = "exhausted"
        while frontier:
            _, _, node = heapq.heappop(frontier)
            count += 1
            new_tau, threshold, abort = decay_schedule(
                count, tau, threshold, config.delta, config.tau_min, config.decay
            )
            decayed = new_tau != tau
            tau = new_tau
            step = _record(trace, node, count, tau, cue_text, scorer)
            step.decayed = decayed
            step.priority = prio(node)
            step.best_id = best.id
            if abort:
                step.aborted = True
                trace.reason = "abort"
                break
            step.c_a = scorer.confidence(node, PromptKind.ANSWERING, question)
            if step.c_a >= tau:
                result, trace.via = node, "current"
                break
            if stopping(best, question, tau, scorer):
                result, trace.via = best, "best"
                break
            if step.c_a >= scorer.confidence(best, PromptKind.ANSWERING, question):
                best = node
            step.best_id = best.id
            if config.max_steps is not None and count >= config.max_steps:
                trace.reason = "budget"
                break
            if not tree.is_leaf(node):
                kids = tree.children(node)
                for kid, p in zip(kids, _score_children(kids, prio, pool)):
                    heapq.heappush(frontier, (-p, kid.id, kid))
    except ZoomEyeError as exc:
        trace.error = str(exc)
        trace.backend_calls = scorer.calls - calls_before
        raise SearchAborted(f"type-1 search for {cue_text!r} failed: {exc}", trace) from exc
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    if result is None:
        result, trace.via, trace.fallback = best, "best", True
    else:
        trace.reason = "stopped"
    trace.result_ids = [result.id]
    trace.tau_final = tau
    trace.backend_calls = scorer.calls - calls_before
    trace.wall_time = time.perf_counter() - started
    return result, trace


def search_type2(
    tree: ImageTree,
    cue: VisualCue | str,
    config: SearchConfig,
    scorer: ConfidenceScorer,
) -> tuple[list[TreeNode], SearchTrace]:
    """Breadth-first sweep down to ``max_type2_depth`` collecting every node with ``c_e >= tau2``."""
    cue_text = cue.text if isinstance(cue, VisualCue) else cue
    trace = SearchTrace(cue=cue_text, kind=CueKind.TYPE2)
    calls_before = scorer.calls
    started = time.perf_counter()
    limit = min(config.max_type2_depth, tree.max_depth)
    results: list[TreeNode] = []
    queue = deque([tree.root])
    count = 0

    def existing(n: TreeNode) -> float:
        return scorer.confidence(n, PromptKind.EXISTING, cue_text)

    pool = ThreadPoolExecutor(config.parallel) if config.parallel > 1 else None
    try:
        while queue:
            node = queue.popleft()
            if node.depth > limit:
                break
            count += 1
            c_e = existing(node)
            _record(trace, node, count, config.tau2, cue_text, scorer)
            if c_e >= config.tau2:
                results.append(node)
            if node.depth < limit:
                kids = tree.children(node)
                _score_children(kids, existing, pool)
                queue.extend(kids)
    except ZoomEyeError as exc:
        trace.error = str(exc)
        trace.backend_calls = scorer.calls - calls_before
        raise SearchAborted(f"type-2 search for {cue_text!r} failed: {exc}", trace) from exc
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    trace.result_ids = [n.id for n in results]
    trace.via = "sweep"
    trace.reason = "complete"
    trace.fallback = not results
    trace.backend_calls = scorer.calls - calls_before
    trace.wall_time = time.perf_counter() - started
    return results, trace


# -- full question -----------------------------------------------------------


@dataclass
class SearchResult:
    question: str
    cues: list[VisualCue]
    nodes: list[TreeNode]
    union: BBox
    traces: list[SearchTrace]
    answer: str | None = None
    root_fallback: bool = False
    pasted: bool = False
    cue_fallback: bool = False
    backend_calls: int = 0
    tree_depth: int = 0
    config: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return sum(len(t.steps) for t in self.traces)

    def to_dict(self, timing: bool = False) -> dict:
        return {
            "schema": "zoomeye.trace/1",
            "question": self.question,
            "cues": [{"text": c.text, "kind": c.kind.value} for c in self.cues],
            "cue_fallback": self.cue_fallback,
            "tree_depth": self.tree_depth,
            "result_nodes": [{"id": n.id, "depth": n.depth, "bbox": list(n.bbox.as_tuple())} for n in self.nodes],
            "union_bbox": list(self.union.as_tuple()),
            "root_fallback": self.root_fallback,
            "paste_composite": self.pasted,
            "answer": self.answer,
            "steps": self.steps,
            "backend_calls": self.backend_calls,
            "config": self.config,
            "traces": [t.to_dict(timing) for t in self.traces],
        }


def final_visual_input(
    image: Image.Image, boxes: Sequence[BBox], config: SearchConfig, source: str = ""
) -> VisualInput:
    """View used for the final answer: the union of all result boxes.

    In local mode a union whose longer side exceeds the paste threshold is
    replaced by the result patches pasted onto a blank canvas.
    """
    union = union_bbox(boxes)
    meta = image_meta(image, source)
    left, top, right, bottom = pixel_rect(union, meta)
    if config.mode is InputMode.LOCAL and max(right - left, bottom - top) > config.paste_threshold:
        return VisualInput(image, union, config.mode, source=meta.source, paste_boxes=boxes)
    return compose_visual_input(image, union, config.mode, source=meta.source)


def run_question(
    image: Image.Image,
    question: str,
    cues: Sequence[VisualCue],
    config: SearchConfig,
    backend: OracleBackend | ConfidenceScorer,
    templates: PromptTemplates | None = None,
    source: str = "",
    answer: bool = True,
) -> SearchResult:
    """Search for every cue, union the hits and answer over that view."""
    if not cues:
        raise ContractError("run_question needs at least one cue")
    meta = image_meta(image, source)
    tree = ImageTree(meta, config.grid, config.leaf_side)
    if isinstance(backend, ConfidenceScorer):
        scorer = backend
    else:
        scorer = ConfidenceScorer(backend, image, config.mode, templates, source=meta.source)
    calls_before = scorer.calls

    found: list[TreeNode] = []
    traces: list[SearchTrace] = []
    for cue in cues:
        if cue.kind is CueKind.TYPE2:
            nodes, trace = search_type2(tree, cue, config, scorer)
            found.extend(nodes)
        else:
            q_s = question if len(cues) == 1 else decomposed_question(cue, config.decomposed_template)
            node, trace = search_type1(tree, cue, q_s, config, scorer)
            found.append(node)
        traces.append(trace)

    root_fallback = not found
    if root_fallback:
        log.info("no cue produced a result node; answering over the full image")
        found = [tree.root]
    boxes = [n.bbox for n in found]
    view = final_visual_input(image, boxes, config, meta.source)
    result = SearchResult(
        question=question,
        cues=list(cues),
        nodes=found,
        union=view.bbox,
        traces=traces,
        root_fallback=root_fallback,
        pasted=view.pasted,
        tree_depth=tree.max_depth,
        config=config.to_dict(),
    )
    if answer:
        result.answer = scorer.generate(view, PromptKind.FINAL_ANSWER, question)
    result.backend_calls = scorer.calls - calls_before
    return result


def answer_question(
    image: Image.Image,
    question: str,
    config: SearchConfig,
    backend: OracleBackend,
    cues: Sequence[VisualCue | str] | None = None,
    prompt_set: CuePromptSet | None = None,
    templates: PromptTemplates | None = None,
    source: str = "",
    cue_question: str | None = None,
) -> SearchResult:
    """Generate cues (unless given), then search and answer.

    ``cue_question`` lets callers ask for cues with the bare question while
    ``question`` carries answer options for the search and final answer.
    """
    meta = image_meta(image, source)
    scorer = ConfidenceScorer(backend, image, config.mode, templates, source=meta.source)
    cue_fallback = False
    if cues:
        parsed = [c if isinstance(c, VisualCue) else VisualCue.of(c) for c in cues]
    else:
        parsed, cue_fallback = cues_or_fallback(cue_question or question, scorer, prompt_set)
    result = run_question(image, question, parsed, config, scorer, source=meta.source)
    result.cue_fallback = cue_fallback
    result.backend_calls = scorer.calls
    return result
