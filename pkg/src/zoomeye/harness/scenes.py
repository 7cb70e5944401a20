"""Seeded synthetic scenes: labelled coloured boxes on a textured canvas."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from zoomeye.errors import ContractError, SceneGenerationError
from zoomeye.geometry import BBox, ImageMeta, ImageTree
from zoomeye.harness.dataset import DatasetRecord, write_dataset
from zoomeye.oracle.simulated import SceneSpec, Target
from zoomeye.visual import save_png

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (215, 35, 35),
    "blue": (35, 70, 215),
    "green": (35, 165, 65),
    "yellow": (240, 215, 40),
    "purple": (140, 45, 180),
    "orange": (245, 135, 25),
    "white": (250, 250, 250),
    "black": (20, 20, 20),
}

NOUNS = [
    "dog", "cat", "car", "bus", "bird", "horse", "boat", "kite", "umbrella", "bicycle",
    "chair", "clock", "bottle", "backpack", "bench", "sign", "cup", "vase", "truck", "flag",
]

PLACEMENT_RETRIES = 500


def plural(noun: str) -> str:
    return noun + "es" if noun.endswith(("s", "sh", "ch", "x")) else noun + "s"


@dataclass
class SceneParams:
    width: int = 1536
    height: int = 1536
    targets: int = 3
    # target side lengths, as fractions of the canvas side
    min_size: float = 0.018
    max_size: float = 0.06
    rho: float = 0.005
    epsilon: float = 0.0
    # every target must be visible in some node of the tree built with each grid
    grids: tuple[int, ...] = (2,)
    s_min: int = 384
    # > 1 turns the first category into a multi-instance group with a counting question
    instances: int = 1
    canvases: list[tuple[int, int]] = field(default_factory=list)
    texture: bool = True

    def __post_init__(self) -> None:
        if self.targets < 1:
            raise ContractError("a scene needs at least one target")
        if not 0 < self.min_size <= self.max_size < 1:
            raise ContractError("need 0 < min_size <= max_size < 1")
        if self.instances < 1:
            raise ContractError("instances must be >= 1")
        if self.targets + self.instances - 1 > len(NOUNS) * 4:
            raise ContractError("too many targets for the label pool")
        self.grids = tuple(self.grids)
        self.canvases = [tuple(c) for c in self.canvases]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grids"] = list(self.grids)
        d["canvases"] = [list(c) for c in self.canvases]
        return d


def reachable(target: BBox, scene: SceneSpec, grid: int, s_min: int) -> bool:
    """Whether some node of the patch tree shows ``target`` as visible."""
    tree = ImageTree(ImageMeta(scene.width, scene.height), grid, s_min)
    probe = Target("probe", target)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if not node.bbox.intersects(target):
            continue
        if scene.visible(probe, node.bbox):
            return True
        if not tree.is_leaf(node):
            stack.extend(tree.children(node))
    return False


def _place(rng: np.random.Generator, params: SceneParams, width: int, height: int, taken: list[BBox], probe: SceneSpec) -> BBox:
    for _ in range(PLACEMENT_RETRIES):
        side = rng.uniform(params.min_size, params.max_size) * max(width, height)
        aspect = rng.uniform(0.7, 1.4)
        w = min(side * aspect, width * 0.9) / width
        h = min(side / aspect, height * 0.9) / height
        x1 = rng.uniform(0.0, 1.0 - w)
        y1 = rng.uniform(0.0, 1.0 - h)
        box = BBox(round(x1, 6), round(y1, 6), round(x1 + w, 6), round(y1 + h, 6))
        if any(box.intersects(t) for t in taken):
            continue
        if all(reachable(box, probe, g, params.s_min) for g in params.grids):
            return box
    raise SceneGenerationError(f"could not place a target after {PLACEMENT_RETRIES} attempts")


def make_scene(seed: int, index: int, params: SceneParams) -> tuple[SceneSpec, DatasetRecord]:
    """Build scene ``index`` of the stream seeded by ``seed``.

    Each scene draws from its own ``(seed, index)`` generator, so a scene
    does not depend on how many others are generated alongside it.
    """
    rng = np.random.default_rng([seed, index])
    if params.canvases:
        width, height = params.canvases[int(rng.integers(len(params.canvases)))]
    else:
        width, height = params.width, params.height
    probe = SceneSpec(width, height, [], rho=params.rho)

    nouns = list(rng.permutation(NOUNS))
    colors = list(COLORS)
    labels: list[str] = []
    if params.instances > 1:
        group = nouns.pop(0)
        labels += [f"{group} #{i + 1}" for i in range(params.instances)]
        labels += nouns[: params.targets - 1]
    else:
        labels += nouns[: params.targets]

    targets: list[Target] = []
    taken: list[BBox] = []
    for label in labels:
        box = _place(rng, params, width, height, taken, probe)
        taken.append(box)
        targets.append(Target(label, box, colors[int(rng.integers(len(colors)))]))

    scene = SceneSpec(
        width, height, targets, rho=params.rho, epsilon=params.epsilon, seed=int(seed) * 100003 + index
    )
    name = f"scene_{index:04d}"
    if params.instances > 1:
        category = targets[0].category
        group = [t for t in targets if t.category == category]
        truth = str(len(group))
        pool = [str(n) for n in range(1, 9) if str(n) != truth]
        wrong = list(rng.choice(pool, size=3, replace=False))
        question = f"How many {plural(category)} are in the image?"
        gold_boxes = [t.bbox for t in group]
    else:
        subject = targets[0]
        truth = subject.attribute
        wrong = list(rng.choice([c for c in colors if c != truth], size=3, replace=False))
        question = f"What is the color of the {subject.label}?"
        gold_boxes = [subject.bbox]
    options = [truth] + [str(w) for w in wrong]
    options = [options[i] for i in rng.permutation(len(options))]
    record = DatasetRecord(
        image=f"{name}.png",
        question=question,
        answer=truth,
        options=options,
        target_boxes=gold_boxes,
        id=name,
        scene=f"{name}.json",
    )
    scene.image = record.image
    return scene, record


def render_scene(scene: SceneSpec, texture: bool = True) -> Image.Image:
    rng = np.random.default_rng(scene.seed)
    if texture:
        coarse = rng.integers(90, 200, size=(6, 6, 3), dtype=np.uint8)
        canvas = Image.fromarray(coarse, "RGB").resize((scene.width, scene.height), Image.Resampling.BICUBIC)
    else:
        canvas = Image.new("RGB", (scene.width, scene.height), (150, 150, 150))
    draw = ImageDraw.Draw(canvas)
    for t in scene.targets:
        x1, y1 = t.bbox.x1 * scene.width, t.bbox.y1 * scene.height
        x2, y2 = t.bbox.x2 * scene.width, t.bbox.y2 * scene.height
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], fill=COLORS.get(t.attribute, (128, 128, 128)), outline=(0, 0, 0), width=2)
    return canvas


def generate_scenes(seed: int, count: int, out_dir: str | Path, params: SceneParams | None = None) -> Path:
    """Write ``count`` scenes (JSON spec + PNG) and a ``dataset.jsonl``; returns the dataset path."""
    params = params or SceneParams()
    if count < 1:
        raise ContractError("count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(count):
        scene, record = make_scene(seed, i, params)
        scene.save(out / record.scene)
        save_png(render_scene(scene, params.texture), out / record.image)
        records.append(record)
    dataset = out / "dataset.jsonl"
    write_dataset(records, dataset)
    (out / "params.json").write_text(json.dumps({"seed": seed, "count": count, **params.to_dict()}, indent=2) + "\n")
    return dataset
