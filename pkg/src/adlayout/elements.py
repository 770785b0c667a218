"""Layout primitives: typed bounding-box elements and whole-poster layouts.

Boxes are stored as (cx, cy, w, h), each a fraction of the image dimension,
with all four corners inside the unit square. A Layout is treated as a set:
nothing downstream may depend on element order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

Box = tuple[float, float, float, float]


class Category(enum.IntEnum):
    LOGO = 0
    TEXT = 1
    UNDERLAY = 2
    EMBELLISHMENT = 3


NUM_CATEGORIES = len(Category)
# Index reserved for "no element behind this query" in class predictions.
NO_OBJECT = NUM_CATEGORIES

_CORNER_TOL = 1e-9


@dataclass(frozen=True)
class LayoutElement:
    category: Category
    box: Box

    def __post_init__(self):
        cx, cy, w, h = self.box
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValueError(f"box center outside unit square: {self.box}")
        if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
            raise ValueError(f"box size must be in (0, 1]: {self.box}")
        x0, y0, x1, y1 = self.corners()
        if min(x0, y0) < -_CORNER_TOL or max(x1, y1) > 1.0 + _CORNER_TOL:
            raise ValueError(f"box corners outside unit square: {self.box}")
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) corner coordinates, fractions of image dims."""
        cx, cy, w, h = self.box
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2

    def area(self) -> float:
        return self.box[2] * self.box[3]


@dataclass
class Layout:
    elements: list[LayoutElement] = field(default_factory=list)
    image_id: str = ""

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def is_empty(self) -> bool:
        return not self.elements

    def of_category(self, *categories: Category) -> list[LayoutElement]:
        wanted = set(categories)
        return [e for e in self.elements if e.category in wanted]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "elements": [
                {"category": e.category.name.lower(), "box": list(e.box)}
                for e in self.elements
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        elements = [
            LayoutElement(Category[e["category"].upper()], tuple(e["box"]))
            for e in d["elements"]
        ]
        return cls(elements=elements, image_id=d.get("image_id", ""))


def clamp_box(cx: float, cy: float, w: float, h: float,
              min_size: float = 1e-6) -> Box:
    """Clamp a raw (cx, cy, w, h) box so all corners land in the unit square.

    Size is preserved where possible (the center is translated inward);
    w/h are clipped to [min_size, 1].
    """
    w = min(max(w, min_size), 1.0)
    h = min(max(h, min_size), 1.0)
    cx = min(max(cx, w / 2), 1.0 - w / 2)
    cy = min(max(cy, h / 2), 1.0 - h / 2)
    return cx, cy, w, h


def round_half_away(x: float) -> int:
    """Round with ties going away from zero (unlike banker's np.round)."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def box_pixel_rect(box: Box, image_dims: tuple[int, int]) -> tuple[int, int, int, int]:
    """Convert a fractional box to a half-open pixel rectangle.

    Corner coordinates are scaled to pixels and rounded half-away-from-zero;
    the result (r0, r1, c0, c1) selects rows r0 <= r < r1 and cols c0 <= c < c1,
    clipped to the image.
    """
    height, width = image_dims
    cx, cy, w, h = box
    c0 = round_half_away((cx - w / 2) * width)
    c1 = round_half_away((cx + w / 2) * width)
    r0 = round_half_away((cy - h / 2) * height)
    r1 = round_half_away((cy + h / 2) * height)
    return (max(r0, 0), min(r1, height), max(c0, 0), min(c1, width))
