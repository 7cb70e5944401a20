from __future__ import annotations

import sys

import pytest
from PIL import Image

from zoomeye.geometry import BBox
from zoomeye.oracle.base import ConfidenceScorer
from zoomeye.oracle.simulated import SceneSpec, SimulatedBackend, Target
from zoomeye.visual import InputMode


class CountingBackend:
    """Wraps a backend and counts yes/no and generate calls."""

    def __init__(self, inner):
        self.inner = inner
        self.yes_no_calls = 0
        self.generate_calls = 0

    def yes_no(self, visual_input, prompt):
        self.yes_no_calls += 1
        return self.inner.yes_no(visual_input, prompt)

    def generate(self, visual_input, prompt, history=()):
        self.generate_calls += 1
        return self.inner.generate(visual_input, prompt, history)


def blank(width: int, height: int) -> Image.Image:
    return Image.new("RGB", (width, height), (128, 128, 128))


def scorer_for(scene: SceneSpec, mode: InputMode = InputMode.GLOBAL_LOCAL, backend=None) -> ConfidenceScorer:
    backend = backend or SimulatedBackend(scene)
    return ConfidenceScorer(backend, blank(scene.width, scene.height), mode)


@pytest.fixture
def ne_scene() -> SceneSpec:
    # 1536px square, D=2 at s_min=384. The dog is too small to count as seen in a
    # quadrant (area ratio 0.0036 < rho) but visible in depth-2 cell (0.75,0,1,.25).
    dog = Target("dog", BBox(0.80, 0.05, 0.83, 0.08), "brown")
    cat = Target("cat", BBox(0.10, 0.60, 0.13, 0.63), "white")
    return SceneSpec(1536, 1536, [dog, cat], rho=0.005)


@pytest.fixture
def counting_backend():
    return CountingBackend


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
