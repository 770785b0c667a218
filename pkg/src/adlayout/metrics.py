"""Layout quality metrics.

Three occlusion scores share one kernel (mean of a value map under the
layout's boxes, x100): background complexity uses a normalized image-gradient
map over text+underlay boxes, subject occlusion uses the saliency map, and
product occlusion uses the product mask, both over all boxes. The graphic
scores are pairwise overlap, underlay validity, and edge alignment, plus the
non-empty-layout ratio. Definitions are fixed here and oracle-tested; scores
are comparable across models trained in this repo only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .data import DomainSample, compose_white_patch_map
from .elements import Category, Layout, LayoutElement

# A model whose mean overlap exceeds this produces unusable layouts.
OVERLAP_FAILURE_THRESHOLD = 0.05

UNDERLAY_CONTAINMENT = 0.9

COMPLEXITY_CATEGORIES = (Category.TEXT, Category.UNDERLAY)


@dataclass
class MetricsReport:
    r_com: float
    r_shm: float
    r_sub: float
    r_ove: float
    r_und: float
    r_ali: float
    r_occ: float
    n_layouts: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k)
                for k in ("r_com", "r_shm", "r_sub", "r_ove", "r_und",
                          "r_ali", "r_occ", "n_layouts")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def gradient_magnitude_map(image: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude of the grayscale image, normalized to [0, 1]."""
    lum = image @ np.array([0.299, 0.587, 0.114], dtype=np.float64)
    gx = ndimage.sobel(lum, axis=1)
    gy = ndimage.sobel(lum, axis=0)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return (mag / peak if peak > 0 else mag).astype(np.float32)


def _intersection_area(a: LayoutElement, b: LayoutElement) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    w = min(ax1, bx1) - max(ax0, bx0)
    h = min(ay1, by1) - max(ay0, by0)
    return max(w, 0.0) * max(h, 0.0)


def compute_occlusion(layout: Layout, value_map: np.ndarray,
                      categories: Iterable[Category] | None = None) -> float:
    """Mean of value_map over the union of the (rasterized) boxes of the
    filtered elements, x100. Empty union -> 0."""
    elements = (layout.elements if categories is None
                else layout.of_category(*categories))
    union = compose_white_patch_map(Layout(elements=elements),
                                    value_map.shape) > 0.5
    if not union.any():
        return 0.0
    return 100.0 * float(np.asarray(value_map, dtype=np.float64)[union].mean())


def compute_overlap(layout: Layout) -> float:
    """Mean over unordered pairs of non-underlay elements of
    intersection area / smaller box area. No pairs -> 0."""
    boxes = [e for e in layout if e.category != Category.UNDERLAY]
    if len(boxes) < 2:
        return 0.0
    ratios = []
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            inter = _intersection_area(boxes[i], boxes[j])
            smaller = min(boxes[i].area(), boxes[j].area())
            ratios.append(inter / smaller)
    return float(np.mean(ratios))


def compute_underlay(layout: Layout) -> float | None:
    """Fraction of underlay elements that contain (>= 90% of the area of) at
    least one non-underlay element; None when the layout has no underlay."""
    underlays = layout.of_category(Category.UNDERLAY)
    if not underlays:
        return None
    others = [e for e in layout if e.category != Category.UNDERLAY]
    valid = 0
    for u in underlays:
        if any(_intersection_area(u, o) >= UNDERLAY_CONTAINMENT * o.area() - 1e-12
               for o in others):
            valid += 1
    return valid / len(underlays)


_AXES = (lambda e: e.corners()[0],      # left
         lambda e: e.box[0],            # x center
         lambda e: e.corners()[2],      # right
         lambda e: e.corners()[1],      # top
         lambda e: e.box[1],            # y center
         lambda e: e.corners()[3])      # bottom


def compute_alignment(layout: Layout) -> float:
    """Mean over elements of the minimum, across the six alignment axes, of
    the distance to the nearest other element on that axis. Singletons -> 0."""
    n = len(layout)
    if n == 0:
        raise ValueError("alignment needs at least one element")
    if n == 1:
        return 0.0
    coords = np.array([[axis(e) for axis in _AXES] for e in layout])  # (n, 6)
    d_min = []
    for i in range(n):
        others = np.delete(coords, i, axis=0)
        d_min.append(np.abs(others - coords[i]).min())
    return float(np.mean(d_min))


def compute_nonempty_ratio(layouts: Sequence[Layout]) -> float:
    if not layouts:
        raise ValueError("need at least one layout")
    return sum(1 for l in layouts if not l.is_empty()) / len(layouts)


def evaluate_corpus(layouts: Sequence[Layout],
                    samples: Sequence[DomainSample]) -> MetricsReport:
    """Corpus-mean metrics; empty layouts count only toward the non-empty
    ratio, and the underlay score averages over layouts that have underlays.
    With no evaluable layouts the other fields are NaN."""
    if len(layouts) != len(samples):
        raise ValueError(f"{len(layouts)} layouts vs {len(samples)} samples")
    com, shm, sub, ove, ali, und = [], [], [], [], [], []
    for layout, sample in zip(layouts, samples):
        if layout.is_empty():
            continue
        com.append(compute_occlusion(layout, gradient_magnitude_map(sample.image),
                                     COMPLEXITY_CATEGORIES))
        shm.append(compute_occlusion(layout, sample.saliency))
        sub.append(compute_occlusion(layout, sample.product_mask))
        ove.append(compute_overlap(layout))
        ali.append(compute_alignment(layout))
        u = compute_underlay(layout)
        if u is not None:
            und.append(u)

    def mean_or_nan(vals):
        return float(np.mean(vals)) if vals else math.nan

    return MetricsReport(
        r_com=mean_or_nan(com),
        r_shm=mean_or_nan(shm),
        r_sub=mean_or_nan(sub),
        r_ove=mean_or_nan(ove),
        r_und=mean_or_nan(und),
        r_ali=mean_or_nan(ali),
        r_occ=compute_nonempty_ratio(layouts),
        n_layouts=len(layouts),
    )


def format_report_table(reports: dict[str, MetricsReport]) -> str:
    """Plain-text table, composition metrics | graphic metrics | R_occ (x100)."""
    header = (f"{'model':<18}{'R_com':>9}{'R_shm':>9}{'R_sub':>9} |"
              f"{'R_ove':>9}{'R_und':>9}{'R_ali':>9} |{'R_occ':>9}")
    lines = [header, "-" * len(header)]
    for name, r in reports.items():
        lines.append(
            f"{name:<18}{r.r_com:>9.3f}{r.r_shm:>9.3f}{r.r_sub:>9.3f} |"
            f"{r.r_ove:>9.4f}{r.r_und:>9.4f}{r.r_ali:>9.4f} |"
            f"{100 * r.r_occ:>9.1f}")
    return "\n".join(lines)
