"""Visual inputs handed to the confidence oracle, plus debug overlays.

Rasters are 8-bit RGB ``PIL.Image`` objects. Nothing here resizes: any
downsampling or tiling is the backend's business.
"""

from __future__ import annotations

import enum
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from PIL import Image, ImageDraw, ImageFont

from zoomeye.errors import ContractError
from zoomeye.geometry import BBox, ImageMeta, TreeNode, pixel_rect, union_bbox

if TYPE_CHECKING:
    from zoomeye.search import SearchTrace

HIGHLIGHT_COLOR = (255, 0, 0)
PASTE_BACKGROUND = (255, 255, 255)
TRACE_COLORS = [
    (255, 0, 0),
    (0, 160, 255),
    (0, 200, 0),
    (255, 170, 0),
    (200, 0, 255),
    (0, 210, 210),
]


class InputMode(str, enum.Enum):
    LOCAL = "local"
    GLOBAL_LOCAL = "global-local"

    @classmethod
    def parse(cls, value: str | InputMode) -> InputMode:
        if isinstance(value, InputMode):
            return value
        key = value.strip().lower().replace("_", "-").replace("+", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ContractError(f"unknown input mode {value!r}")


def load_image(path: str | Path) -> Image.Image:
    """Open an image lazily as RGB.

    Decoding is deferred until pixels are touched, so backends that only
    need geometry (the simulator) never pay for it.
    """
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return img


def image_meta(image: Image.Image, source: str = "") -> ImageMeta:
    if not source:
        source = getattr(image, "filename", "") or ""
    return ImageMeta(image.width, image.height, str(source))


def save_png(image: Image.Image, path: str | Path) -> None:
    image.save(path, format="PNG", optimize=False, compress_level=1)


def stroke_width(image: Image.Image) -> int:
    return max(2, round(0.004 * max(image.size)))


def _rect(bbox: BBox, image: Image.Image) -> tuple[int, int, int, int]:
    return pixel_rect(bbox, ImageMeta(image.width, image.height))


def crop(image: Image.Image, node: TreeNode | BBox) -> Image.Image:
    bbox = node if isinstance(node, BBox) else node.bbox
    return image.crop(_rect(bbox, image))


def draw_highlight(image: Image.Image, bbox: BBox) -> Image.Image:
    """Copy of ``image`` with a red rectangle drawn just inside ``bbox``."""
    out = image.copy()
    left, top, right, bottom = _rect(bbox, image)
    ImageDraw.Draw(out).rectangle(
        [left, top, right - 1, bottom - 1], outline=HIGHLIGHT_COLOR, width=stroke_width(image)
    )
    return out


class VisualInput:
    """The image(s) shown to the oracle for one patch view.

    Rasters are built on first access. ``bbox`` is the view's provenance,
    which is all a geometry-only backend ever reads.
    """

    def __init__(
        self,
        image: Image.Image,
        bbox: BBox,
        mode: InputMode,
        node_id: int | None = None,
        source: str = "",
        paste_boxes: Sequence[BBox] | None = None,
    ):
        self.source_image = image
        self.bbox = bbox
        self.mode = mode
        self.node_id = node_id
        self.source = source
        self.paste_boxes = tuple(paste_boxes) if paste_boxes else None

    @property
    def pasted(self) -> bool:
        return self.paste_boxes is not None

    @cached_property
    def local_patch(self) -> Image.Image:
        if self.paste_boxes is not None:
            return paste_composite(self.source_image, self.paste_boxes)
        return crop(self.source_image, self.bbox)

    @cached_property
    def global_image(self) -> Image.Image | None:
        if self.mode is InputMode.LOCAL:
            return None
        return draw_highlight(self.source_image, self.bbox)

    @property
    def images(self) -> list[Image.Image]:
        if self.mode is InputMode.LOCAL:
            return [self.local_patch]
        return [self.global_image, self.local_patch]

    def __repr__(self) -> str:
        return f"VisualInput(mode={self.mode.value}, node={self.node_id}, bbox={self.bbox.as_tuple()})"


def compose_visual_input(
    image: Image.Image, node: TreeNode | BBox, mode: InputMode, source: str = ""
) -> VisualInput:
    if isinstance(node, BBox):
        bbox, node_id = node, None
    else:
        bbox, node_id = node.bbox, node.id
    _rect(bbox, image)  # fail fast on degenerate views
    return VisualInput(image, bbox, mode, node_id=node_id, source=source)


def paste_composite(image: Image.Image, boxes: Sequence[TreeNode | BBox]) -> Image.Image:
    """Paste each patch onto a white canvas spanning their union.

    Patches keep their offsets relative to the union's top-left corner;
    everything between them stays background.
    """
    if not boxes:
        raise ContractError("paste_composite needs at least one node")
    bboxes = [b if isinstance(b, BBox) else b.bbox for b in boxes]
    u_left, u_top, u_right, u_bottom = _rect(union_bbox(bboxes), image)
    canvas = Image.new("RGB", (u_right - u_left, u_bottom - u_top), PASTE_BACKGROUND)
    for bbox in bboxes:
        left, top, right, bottom = _rect(bbox, image)
        canvas.paste(image.crop((left, top, right, bottom)), (left - u_left, top - u_top))
    return canvas


def _font(size: int) -> ImageFont.ImageFont:
    try:
        return ImageFont.truetype("DejaVuSans-Bold.ttf", size)
    except OSError:
        return ImageFont.load_default()


def render_trace(image: Image.Image, trace: SearchTrace | Sequence) -> Image.Image:
    """Outline every visited patch and label it with its step index.

    Accepts a :class:`SearchTrace` or a plain sequence of trace steps.
    """
    steps = list(getattr(trace, "steps", trace))
    out = image.copy()
    if not steps:
        return out
    draw = ImageDraw.Draw(out)
    width = stroke_width(image)
    font = _font(max(12, width * 5))
    for step in steps:
        left, top, right, bottom = _rect(step.bbox, image)
        color = TRACE_COLORS[(step.depth or 0) % len(TRACE_COLORS)]
        draw.rectangle([left, top, right - 1, bottom - 1], outline=color, width=width)
        draw.text((left + width + 2, top + width + 2), str(step.step), fill=color, font=font)
    return out
