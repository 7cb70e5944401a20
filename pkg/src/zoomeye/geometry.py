"""Normalized boxes and the lazily expanded image patch tree.

All box coordinates are fractions of the image width/height in ``[0, 1]``.
Pixel coordinates only appear in :func:`pixel_rect`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from zoomeye.errors import ContractError, DegenerateBBoxError, LeafExpansionError

# Products like (2/3) * 999 land a hair off an integer; snap before floor/ceil.
_SNAP = 1e-9


@dataclass(frozen=True, order=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ContractError(f"invalid normalized box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def contains(self, other: BBox, tol: float = 0.0) -> bool:
        return (
            self.x1 <= other.x1 + tol
            and self.y1 <= other.y1 + tol
            and other.x2 <= self.x2 + tol
            and other.y2 <= self.y2 + tol
        )

    def intersection_area(self, other: BBox) -> float:
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    def intersects(self, other: BBox) -> bool:
        return self.intersection_area(other) > 0.0

    @classmethod
    def full(cls) -> BBox:
        return cls(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def from_sequence(cls, values: Iterable[float]) -> BBox:
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class ImageMeta:
    width_px: int
    height_px: int
    source: str = ""

    def __post_init__(self) -> None:
        if self.width_px < 1 or self.height_px < 1:
            raise ContractError(f"image size must be positive, got {self.width_px}x{self.height_px}")

    @property
    def max_side(self) -> int:
        return max(self.width_px, self.height_px)


@dataclass
class TreeNode:
    """One patch view of the image.

    ``scores`` is the per-search cache of confidences; keys are
    ``(kind, subject)`` pairs, values are floats in (-1, 1).
    """

    id: int
    depth: int
    bbox: BBox
    parent_id: int | None = None
    scores: dict[tuple[str, str], float] = field(default_factory=dict, repr=False, compare=False)

    @property
    def is_root(self) -> bool:
        return self.parent_id is None


def split_bbox(bbox: BBox, g: int) -> list[BBox]:
    """Partition ``bbox`` into a g x g grid, row-major from the top-left.

    Neighbouring cells share the exact same float edge, so the cells tile
    the parent with no gaps.
    """
    if g < 2:
        raise ContractError(f"split factor must be >= 2, got {g}")
    xs = [bbox.x1 + bbox.width * i / g for i in range(g)] + [bbox.x2]
    ys = [bbox.y1 + bbox.height * i / g for i in range(g)] + [bbox.y2]
    xs[0], ys[0] = bbox.x1, bbox.y1
    return [BBox(xs[c], ys[r], xs[c + 1], ys[r + 1]) for r in range(g) for c in range(g)]


def split_node(node: TreeNode, g: int, max_depth: int) -> list[BBox]:
    if node.depth >= max_depth:
        raise LeafExpansionError(f"node {node.id} at depth {node.depth} is a leaf (D={max_depth})")
    return split_bbox(node.bbox, g)


def tree_depth(meta: ImageMeta, g: int, s_min: int) -> int:
    """Smallest depth D >= 1 at which a cell's longer side is <= s_min pixels."""
    if g < 2 or s_min < 1:
        raise ContractError("split factor must be >= 2 and s_min positive")
    depth = 1
    # integer comparison avoids float drift: max_side / g**D <= s_min
    while meta.max_side > s_min * g**depth:
        depth += 1
    return depth


def union_bbox(boxes: Iterable[BBox]) -> BBox:
    boxes = list(boxes)
    if not boxes:
        raise ContractError("union_bbox needs at least one box")
    return BBox(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def _floor(v: float) -> int:
    r = round(v)
    return int(r) if abs(v - r) < _SNAP else math.floor(v)


def _ceil(v: float) -> int:
    r = round(v)
    return int(r) if abs(v - r) < _SNAP else math.ceil(v)


def pixel_rect(bbox: BBox, meta: ImageMeta) -> tuple[int, int, int, int]:
    """Map a normalized box to ``(left, top, right, bottom)`` pixels.

    Edges expand outward (floor on the near side, ceil on the far side) so
    a crop never drops boundary pixels.
    """
    left = _floor(bbox.x1 * meta.width_px)
    top = _floor(bbox.y1 * meta.height_px)
    right = min(_ceil(bbox.x2 * meta.width_px), meta.width_px)
    bottom = min(_ceil(bbox.y2 * meta.height_px), meta.height_px)
    if right <= left or bottom <= top:
        raise DegenerateBBoxError(f"box {bbox.as_tuple()} is empty on a {meta.width_px}x{meta.height_px} image")
    return (left, top, right, bottom)


def coverage(target: BBox, region: BBox) -> float:
    """Fraction of ``target``'s area that lies inside ``region``."""
    return min(1.0, target.intersection_area(region) / target.area)


class ImageTree:
    """Hierarchical g x g patch tree over one image.

    Children are materialized on first expansion. Ids follow breadth-first
    order of the complete tree: child ``j`` of node ``p`` gets
    ``p * g**2 + j + 1``, so they are stable regardless of visit order.
    Expansion mutates the tree and is not thread-safe.
    """

    def __init__(self, meta: ImageMeta, g: int = 2, s_min: int = 384):
        if g < 2:
            raise ContractError(f"split factor must be >= 2, got {g}")
        self.meta = meta
        self.g = g
        self.s_min = s_min
        self.max_depth = tree_depth(meta, g, s_min)
        self.root = TreeNode(id=0, depth=0, bbox=BBox.full())
        self._nodes: dict[int, TreeNode] = {0: self.root}
        self._children: dict[int, list[TreeNode]] = {}

    @property
    def fanout(self) -> int:
        return self.g * self.g

    def is_leaf(self, node: TreeNode) -> bool:
        return node.depth >= self.max_depth

    def node(self, node_id: int) -> TreeNode:
        return self._nodes[node_id]

    def children(self, node: TreeNode) -> list[TreeNode]:
        kids = self._children.get(node.id)
        if kids is None:
            base = node.id * self.fanout
            kids = [
                TreeNode(id=base + j + 1, depth=node.depth + 1, bbox=cell, parent_id=node.id)
                for j, cell in enumerate(split_node(node, self.g, self.max_depth))
            ]
            for kid in kids:
                self._nodes[kid.id] = kid
            self._children[node.id] = kids
        return kids

    def materialized(self) -> list[TreeNode]:
        return [self._nodes[k] for k in sorted(self._nodes)]

    def iter_nodes(self, max_depth: int | None = None) -> Iterator[TreeNode]:
        """Breadth-first walk of the full tree (expanding as it goes)."""
        limit = self.max_depth if max_depth is None else min(max_depth, self.max_depth)
        level = [self.root]
        while level:
            yield from level
            if level[0].depth >= limit:
                break
            level = [kid for n in level for kid in self.children(n)]

    def node_count(self, max_depth: int | None = None) -> int:
        limit = self.max_depth if max_depth is None else min(max_depth, self.max_depth)
        return sum(self.fanout**d for d in range(limit + 1))
