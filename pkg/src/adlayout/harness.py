"""Ablation runner and qualitative rendering.

Grids mirror the standard sweeps: discriminator kind + adversarial weight,
patch output size, feature level, and label-smoothing scheme. A cell whose
mean overlap exceeds the failure threshold is flagged failed rather than
reported (layouts collapse onto each other and are unusable).
"""

from __future__ import annotations

import hashlib
import json
import math
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data import Corpus, DomainSample
from .discriminator import DiscriminatorConfig
from .elements import Category, Layout
from .errors import ConfigError
from .generator import decode_layout, samples_to_tensors
from .metrics import (MetricsReport, OVERLAP_FAILURE_THRESHOLD, evaluate_corpus,
                      format_report_table)
from .training import TrainConfig, Trainer

ABLATION_AXES = ("disc_kind_and_weight", "patch_size", "feature_level", "smoothing")

GLOBAL_WEIGHT_SWEEP = (6.0, 1.0, 0.01, 0.001, 0.0001, 0.0)

# Reference patch grid for 350x240 inputs; other dims scale it proportionally.
REFERENCE_PATCH_GRID = ((12, 8), (24, 16), (44, 30), (88, 60), (350, 240))
_REFERENCE_DIMS = (350, 240)


@dataclass
class AblationCell:
    name: str
    config: TrainConfig


@dataclass
class AblationSuite:
    axis: str
    values: list[AblationCell]
    base: TrainConfig
    trials: int = 1

    def __post_init__(self):
        if not self.values:
            raise ConfigError("ablation suite needs at least one cell")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")


def patch_grid_for_dims(image_dims: tuple[int, int]) -> list[tuple[int, int]]:
    height, width = image_dims
    grid = []
    for ph, pw in REFERENCE_PATCH_GRID:
        h = max(1, round(height * ph / _REFERENCE_DIMS[0]))
        w = max(1, round(width * pw / _REFERENCE_DIMS[1]))
        grid.append((h, w))
    return grid


def build_suite(axis: str, base: TrainConfig,
                image_dims: tuple[int, int] | None = None,
                trials: int = 1) -> AblationSuite:
    cells: list[AblationCell] = []
    if axis == "disc_kind_and_weight":
        for weight in GLOBAL_WEIGHT_SWEEP:
            cfg = replace(base,
                          weights=replace(base.weights, gamma=weight),
                          disc=DiscriminatorConfig(kind="global",
                                                   feature_level=base.disc.feature_level))
            cells.append(AblationCell(name=f"global-{weight}", config=cfg))
        cells.append(AblationCell(
            name="pixel-6.0",
            config=replace(base, weights=replace(base.weights, gamma=6.0),
                           disc=DiscriminatorConfig(kind="pixel",
                                                    feature_level=base.disc.feature_level))))
    elif axis == "patch_size":
        if image_dims is None:
            raise ConfigError("patch_size axis needs image_dims")
        for dims in patch_grid_for_dims(image_dims):
            cfg = replace(base, disc=DiscriminatorConfig(
                kind="patch", patch_dims=dims,
                feature_level=base.disc.feature_level))
            cells.append(AblationCell(name=f"patch-{dims[0]}x{dims[1]}", config=cfg))
    elif axis == "feature_level":
        for level in ("deep", "fusion", "shallow"):
            cfg = replace(base, disc=replace(base.disc, feature_level=level))
            cells.append(AblationCell(name=f"level-{level}", config=cfg))
    elif axis == "smoothing":
        for scheme in ("none", "two_side", "one_source", "one_target"):
            cells.append(AblationCell(name=f"smooth-{scheme}",
                                      config=replace(base, smoothing=scheme)))
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; "
                          f"expected one of {ABLATION_AXES}")
    return AblationSuite(axis=axis, values=cells, base=base, trials=trials)


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha1(config.to_json().encode()).hexdigest()[:12]


def is_failed(report: MetricsReport) -> bool:
    """The failure rule is purely a function of mean overlap vs the threshold."""
    return bool(report.r_ove > OVERLAP_FAILURE_THRESHOLD) \
        or math.isnan(report.r_ove)


def predict_layouts(generator, samples: list[DomainSample],
                    score_threshold: float = 0.5,
                    device: str = "cpu") -> list[Layout]:
    import torch

    generator = generator.to(device).eval()
    layouts = []
    with torch.no_grad():
        for lo in range(0, len(samples), 32):
            chunk = samples[lo:lo + 32]
            images, saliency = samples_to_tensors(chunk, device=device)
            _, pred = generator(images, saliency)
            for i, sample in enumerate(chunk):
                layouts.append(decode_layout(pred.sample(i), score_threshold,
                                             image_id=sample.sample_id))
    return layouts


def run_ablation(suite: AblationSuite, corpus: Corpus,
                 eval_samples: list[DomainSample],
                 out_dir: str | Path | None = None) -> list[dict]:
    """Train every cell x trial with a shared seed set and evaluate on the
    held-out samples. A crash inside a cell is recorded, not fatal."""
    rows = []
    for cell in suite.values:
        for trial in range(suite.trials):
            seed = suite.base.seed + trial
            cfg = replace(cell.config, seed=seed)
            row = {"cell": cell.name, "trial": trial, "seed": seed,
                   "config_hash": config_hash(cfg), "report": None,
                   "failed": None, "error": None}
            try:
                result = Trainer(cfg, corpus).train()
                layouts = predict_layouts(result.generator, eval_samples,
                                          cfg.score_threshold, cfg.device)
                report = evaluate_corpus(layouts, eval_samples)
                row["report"] = report.to_dict()
                row["failed"] = is_failed(report)
            except Exception as err:   # noqa: BLE001 - suite must survive cells
                row["error"] = f"{type(err).__name__}: {err}"
                row["traceback"] = traceback.format_exc()
            rows.append(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"ablation_{suite.axis}.json", "w") as f:
            json.dump(rows, f, indent=2)
        with open(out / f"ablation_{suite.axis}.txt", "w") as f:
            f.write(format_ablation_table(rows) + "\n")
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    reports = {}
    failed_lines = []
    for row in rows:
        label = f"{row['cell']}#{row['trial']}"
        if row["error"] is not None:
            failed_lines.append(f"{label:<18} crashed: {row['error']}")
        elif row["failed"]:
            failed_lines.append(
                f"{label:<18} -  (overlap {row['report']['r_ove']:.4f} exceeds "
                f"{OVERLAP_FAILURE_THRESHOLD})")
        else:
            reports[label] = MetricsReport(**row["report"])
    lines = [format_report_table(reports)] if reports else []
    return "\n".join(lines + failed_lines)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

@dataclass
class RenderStyle:
    palette: dict = field(default_factory=lambda: {
        Category.LOGO: (230, 60, 60),
        Category.TEXT: (40, 110, 230),
        Category.UNDERLAY: (250, 200, 60),
        Category.EMBELLISHMENT: (90, 200, 120),
    })
    line_width: int = 1
    fill_alpha: float = 0.25


def render_layout(image: np.ndarray, layout: Layout,
                  style: RenderStyle | None = None) -> np.ndarray:
    """Draw category-colored boxes over an image; underlays first so the
    elements they back stay visible. Returns an (H, W, 3) uint8 array."""
    style = style or RenderStyle()
    canvas = Image.fromarray(np.round(np.asarray(image) * 255.0).astype(np.uint8),
                             mode="RGB").convert("RGBA")
    overlay = Image.new("RGBA", canvas.size, (0, 0, 0, 0))
    draw = ImageDraw.Draw(overlay)
    height, width = np.asarray(image).shape[:2]
    ordered = sorted(layout.elements,
                     key=lambda e: 0 if e.category == Category.UNDERLAY else 1)
    for element in ordered:
        x0, y0, x1, y1 = element.corners()
        px = (round(x0 * (width - 1)), round(y0 * (height - 1)),
              round(x1 * (width - 1)), round(y1 * (height - 1)))
        color = style.palette[element.category]
        draw.rectangle(px, fill=(*color, int(255 * style.fill_alpha)),
                       outline=(*color, 255), width=style.line_width)
    merged = Image.alpha_composite(canvas, overlay).convert("RGB")
    return np.asarray(merged)


def save_render(path: str | Path, image: np.ndarray, layout: Layout,
                style: RenderStyle | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(render_layout(image, layout, style), mode="RGB").save(path)
    return path
