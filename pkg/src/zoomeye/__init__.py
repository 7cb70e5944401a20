"""Confidence-guided tree search over image patches for multimodal question answering."""

from zoomeye.cues import CueKind, CuePromptSet, VisualCue, classify_cue, decomposed_question, generate_cues, parse_cues
from zoomeye.geometry import BBox, ImageMeta, ImageTree, TreeNode, coverage, pixel_rect, split_bbox, tree_depth, union_bbox
from zoomeye.oracle import ConfidenceScorer, RemoteBackend, RemoteConfig, SceneSpec, SimulatedBackend, logits_ratio
from zoomeye.search import (
    SearchConfig,
    SearchResult,
    SearchTrace,
    answer_question,
    node_priority,
    run_question,
    search_type1,
    search_type2,
    weight,
)
from zoomeye.visual import InputMode, VisualInput, compose_visual_input, paste_composite, render_trace

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "ConfidenceScorer",
    "CueKind",
    "CuePromptSet",
    "ImageMeta",
    "ImageTree",
    "InputMode",
    "RemoteBackend",
    "RemoteConfig",
    "SceneSpec",
    "SearchConfig",
    "SearchResult",
    "SearchTrace",
    "SimulatedBackend",
    "TreeNode",
    "VisualCue",
    "VisualInput",
    "answer_question",
    "classify_cue",
    "compose_visual_input",
    "coverage",
    "decomposed_question",
    "generate_cues",
    "logits_ratio",
    "node_priority",
    "parse_cues",
    "paste_composite",
    "pixel_rect",
    "render_trace",
    "run_question",
    "search_type1",
    "search_type2",
    "split_bbox",
    "tree_depth",
    "union_bbox",
    "weight",
]
