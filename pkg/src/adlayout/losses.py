"""Training objectives.

Pixel-level adversarial terms: the discriminator is trained to reproduce the
(smoothed) white-patch map of each image, weighted alpha on source / beta on
target; the generator is trained against a fabricated all-smooth_low source
target so detection of inpainted pixels is driven back toward the clean-pixel
label. Reconstruction is a DETR-style direct set prediction loss: optimal
bipartite matching, then weighted class CE + box L1 + (1 - GIoU).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .elements import NO_OBJECT, NUM_CATEGORIES, Layout
from .generator import LayoutPrediction

SMOOTHING_SCHEMES = ("none", "one_target", "one_source", "two_side")

# CE weight for the "no object" class; real categories weigh 1.
NO_OBJECT_CE_WEIGHT = 0.1

_GIOU_EPS = 1e-7


@dataclass
class LossWeights:
    alpha: float = 2.0        # source-domain map term
    beta: float = 1.0         # target-domain map term
    gamma: float = 6.0        # adversarial weight inside the generator total
    smooth_low: float = 0.2   # what 0-labels become under smoothing
    smooth_high: float = 0.8  # what 1-labels become under smoothing

    def __post_init__(self):
        if min(self.alpha, self.beta) <= 0 or self.gamma < 0:
            raise ValueError("alpha/beta must be > 0 and gamma >= 0")
        if not (0.0 <= self.smooth_low < self.smooth_high <= 1.0):
            raise ValueError("need 0 <= smooth_low < smooth_high <= 1")


@dataclass
class MatchCosts:
    cls: float = 1.0
    l1: float = 5.0
    giou: float = 2.0


@dataclass
class Assignment:
    """Bipartite match: (query_index, gt_index) pairs, injective both ways."""
    pairs: list[tuple[int, int]]

    def query_to_gt(self) -> dict[int, int]:
        return dict(self.pairs)


def smooth_labels(white_patch: np.ndarray, scheme: str,
                  weights: LossWeights) -> np.ndarray:
    """Apply a label-smoothing scheme to a binary white-patch map.

    none: identity; one_target: 0 -> smooth_low; one_source: 1 -> smooth_high;
    two_side: both replacements.
    """
    if scheme not in SMOOTHING_SCHEMES:
        raise ValueError(f"unknown smoothing scheme {scheme!r}")
    values = np.asarray(white_patch, dtype=np.float32)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValueError("white-patch map must be binary before smoothing")
    if scheme == "none":
        return values.copy()
    low = weights.smooth_low if scheme in ("one_target", "two_side") else 0.0
    high = weights.smooth_high if scheme in ("one_source", "two_side") else 1.0
    return np.where(values > 0.5, np.float32(high), np.float32(low))


def _domain_term(pred: torch.Tensor | None, target: torch.Tensor | None):
    """Per-pixel mean |target - pred| over every pixel of the domain's images,
    or None when the batch holds no image from that domain."""
    if pred is None or pred.numel() == 0:
        return None
    if target.shape != pred.shape:
        raise ValueError(f"map dims differ: {tuple(target.shape)} vs {tuple(pred.shape)}")
    return (target - pred).abs().mean()


def pd_discriminator_loss(pred_source: torch.Tensor | None,
                          target_source: torch.Tensor | None,
                          pred_target: torch.Tensor | None,
                          target_target: torch.Tensor | None,
                          weights: LossWeights) -> torch.Tensor:
    """alpha * mean|gt_s - pred_s| + beta * mean|gt_t - pred_t|.

    Means are per domain across all of that domain's pixels in the batch; an
    absent domain contributes 0 (callers flag it in their step stats).
    """
    source = _domain_term(pred_source, target_source)
    target = _domain_term(pred_target, target_target)
    total = None
    if source is not None:
        total = weights.alpha * source
    if target is not None:
        term = weights.beta * target
        total = term if total is None else total + term
    if total is None:
        raise ValueError("batch contains neither source nor target maps")
    return total


def pd_generator_loss(pred_source: torch.Tensor | None,
                      pred_target: torch.Tensor | None,
                      target_target: torch.Tensor | None,
                      weights: LossWeights) -> torch.Tensor:
    """Generator-side map loss: the true source white-patch map never enters;
    source predictions are pulled toward a constant smooth_low map."""
    fabricated = None
    if pred_source is not None and pred_source.numel() > 0:
        fabricated = torch.full_like(pred_source, weights.smooth_low)
    return pd_discriminator_loss(pred_source, fabricated,
                                 pred_target, target_target, weights)


# ---------------------------------------------------------------------------
# set-prediction reconstruction
# ---------------------------------------------------------------------------

def box_cxcywh_to_corners(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def generalized_box_iou(boxes_a: torch.Tensor, boxes_b: torch.Tensor) -> torch.Tensor:
    """Pairwise GIoU for cxcywh boxes; (N, 4) x (M, 4) -> (N, M).

    Zero-area boxes get IoU 0; the enclosing-box term is guarded with eps.
    """
    a = box_cxcywh_to_corners(boxes_a)
    b = box_cxcywh_to_corners(boxes_b)
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)

    lt = torch.max(a[:, None, :2], b[None, :, :2])
    rb = torch.min(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    iou = inter / (union + _GIOU_EPS)

    lt_enc = torch.min(a[:, None, :2], b[None, :, :2])
    rb_enc = torch.max(a[:, None, 2:], b[None, :, 2:])
    wh_enc = (rb_enc - lt_enc).clamp(min=0)
    enclose = wh_enc[..., 0] * wh_enc[..., 1]
    return iou - (enclose - union) / (enclose + _GIOU_EPS)


def _gt_tensors(gt: Layout, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    classes = torch.tensor([int(e.category) for e in gt], dtype=torch.long,
                           device=like.device)
    boxes = torch.tensor([e.box for e in gt], dtype=like.dtype, device=like.device)
    return classes, boxes


def hungarian_match(pred: LayoutPrediction, gt: Layout,
                    costs: MatchCosts = MatchCosts()) -> Assignment:
    """Optimal query-to-element assignment under the matching cost
    cls * (-p(class_gt)) + l1 * ||box_pred - box_gt||_1 + giou * (1 - GIoU)."""
    if pred.batched:
        raise ValueError("hungarian_match expects a single-sample prediction")
    n_queries = pred.class_logits.shape[0]
    if len(gt) > n_queries:
        raise ValueError(f"{len(gt)} gt elements exceed {n_queries} queries")
    if len(gt) == 0:
        return Assignment(pairs=[])

    with torch.no_grad():
        gt_classes, gt_boxes = _gt_tensors(gt, pred.boxes)
        probs = pred.class_probs()
        cost = (costs.cls * (-probs[:, gt_classes])
                + costs.l1 * torch.cdist(pred.boxes, gt_boxes, p=1)
                + costs.giou * (1 - generalized_box_iou(pred.boxes, gt_boxes)))
        rows, cols = linear_sum_assignment(cost.cpu().numpy())
    return Assignment(pairs=sorted(zip(rows.tolist(), cols.tolist()),
                                   key=lambda p: p[1]))


def matching_cost_of(pred: LayoutPrediction, gt: Layout, pairs,
                     costs: MatchCosts = MatchCosts()) -> float:
    """Total matching cost of an explicit assignment (oracle support)."""
    with torch.no_grad():
        gt_classes, gt_boxes = _gt_tensors(gt, pred.boxes)
        probs = pred.class_probs()
        total = 0.0
        for q, g in pairs:
            giou = generalized_box_iou(pred.boxes[q:q + 1], gt_boxes[g:g + 1])[0, 0]
            total += float(
                costs.cls * (-probs[q, gt_classes[g]])
                + costs.l1 * (pred.boxes[q] - gt_boxes[g]).abs().sum()
                + costs.giou * (1 - giou))
    return total


def reconstruction_loss(pred: LayoutPrediction, gt: Layout,
                        assignment: Assignment,
                        costs: MatchCosts = MatchCosts()) -> torch.Tensor:
    """Set-prediction loss for one sample under a fixed assignment.

    Class CE runs over all queries (unmatched ones target "no object" with
    weight NO_OBJECT_CE_WEIGHT, weighted-mean reduction); box L1 and
    (1 - GIoU) average over matched pairs only.
    """
    if pred.batched:
        raise ValueError("reconstruction_loss expects a single-sample prediction")
    logits, boxes = pred.class_logits, pred.boxes
    n_queries = logits.shape[0]
    q2g = assignment.query_to_gt()
    if len(q2g) != len(gt):
        raise ValueError("assignment does not cover every gt element")

    targets = torch.full((n_queries,), NO_OBJECT, dtype=torch.long,
                         device=logits.device)
    gt_classes, gt_boxes = _gt_tensors(gt, boxes)
    for q, g in q2g.items():
        targets[q] = gt_classes[g]
    ce_weight = torch.ones(NUM_CATEGORIES + 1, dtype=logits.dtype,
                           device=logits.device)
    ce_weight[NO_OBJECT] = NO_OBJECT_CE_WEIGHT
    loss = costs.cls * F.cross_entropy(logits, targets, weight=ce_weight)

    if q2g:
        q_idx = torch.tensor(sorted(q2g), dtype=torch.long, device=boxes.device)
        g_idx = torch.tensor([q2g[int(q)] for q in q_idx], dtype=torch.long,
                             device=boxes.device)
        matched_pred = boxes[q_idx]
        matched_gt = gt_boxes[g_idx]
        l1 = (matched_pred - matched_gt).abs().sum(dim=-1).mean()
        giou = generalized_box_iou(matched_pred, matched_gt).diagonal()
        loss = loss + costs.l1 * l1 + costs.giou * (1 - giou).mean()
    return loss


def generator_total_loss(l_rec: torch.Tensor | float,
                         l_pd_g: torch.Tensor | float,
                         weights: LossWeights) -> torch.Tensor:
    l_rec = torch.as_tensor(l_rec, dtype=torch.float32) if not torch.is_tensor(l_rec) else l_rec
    l_pd_g = torch.as_tensor(l_pd_g, dtype=torch.float32) if not torch.is_tensor(l_pd_g) else l_pd_g
    if not (torch.isfinite(l_rec) and torch.isfinite(l_pd_g)):
        raise ValueError(f"non-finite loss inputs: l_rec={l_rec}, l_pd_g={l_pd_g}")
    return l_rec + weights.gamma * l_pd_g
