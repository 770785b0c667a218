"""Synthetic two-domain corpus for poster-layout training.

Source samples are product renders carrying a ground-truth layout and
simulated inpainting artifacts inside the layout's element boxes; target
samples are clean renders with no annotations. The white-patch map marks,
per pixel, whether the image was touched by the (simulated) inpainting:
1 = inpainted, 0 = clean; target maps are all zero.

All images live on the 8-bit grid (multiples of 1/255) so the in-memory
corpus is bit-identical to its PNG serialization. Everything is a pure
function of (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .elements import Category, Layout, LayoutElement, box_pixel_rect, clamp_box
from .errors import ConfigError

DOMAIN_SOURCE = "source"
DOMAIN_TARGET = "target"

# Amplitude of the structured noise stamped onto inpainted pixels, and the
# guaranteed minimum per-pixel change (> 1/255, so the artifact survives
# 8-bit quantization).
INPAINT_NOISE_AMPLITUDE = 0.05
INPAINT_MIN_CHANGE = 0.01

# Integer namespaces for per-purpose RNG streams derived from the corpus seed.
_NS_SOURCE, _NS_TARGET, _NS_SOURCE_SUBSET, _NS_TARGET_DRAW, _NS_ORDER = 0, 1, 10, 11, 12


@dataclass
class DomainSample:
    image: np.ndarray          # (H, W, 3) float32 in [0, 1]
    saliency: np.ndarray       # (H, W) float32 in [0, 1]
    product_mask: np.ndarray   # (H, W) float32 in {0, 1}
    domain: str                # DOMAIN_SOURCE or DOMAIN_TARGET
    white_patch: np.ndarray    # (H, W) float32 in {0, 1}; all-zero for target
    gt_layout: Layout | None   # present iff domain == source
    sample_id: str = ""


@dataclass
class CorpusManifest:
    source_ids: list[str]
    target_ids: list[str]
    image_dims: tuple[int, int]
    seed: int
    inpaint_noise_amplitude: float = INPAINT_NOISE_AMPLITUDE

    def __post_init__(self):
        self.image_dims = tuple(int(v) for v in self.image_dims)
        if set(self.source_ids) & set(self.target_ids):
            raise ConfigError("source and target ids must be disjoint")

    def to_dict(self) -> dict:
        return {
            "source_ids": list(self.source_ids),
            "target_ids": list(self.target_ids),
            "image_dims": list(self.image_dims),
            "seed": self.seed,
            "inpaint_noise_amplitude": self.inpaint_noise_amplitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            source_ids=list(d["source_ids"]),
            target_ids=list(d["target_ids"]),
            image_dims=tuple(d["image_dims"]),
            seed=int(d["seed"]),
            inpaint_noise_amplitude=float(d.get("inpaint_noise_amplitude",
                                                INPAINT_NOISE_AMPLITUDE)),
        )


@dataclass
class Corpus:
    manifest: CorpusManifest
    samples: dict[str, DomainSample] = field(default_factory=dict)

    def __getitem__(self, sample_id: str) -> DomainSample:
        return self.samples[sample_id]

    def __len__(self) -> int:
        return len(self.samples)

    def source_samples(self) -> list[DomainSample]:
        return [self.samples[i] for i in self.manifest.source_ids]

    def target_samples(self) -> list[DomainSample]:
        return [self.samples[i] for i in self.manifest.target_ids]

    def save(self, out_dir: str | Path) -> Path:
        return save_corpus(self, out_dir)


def compose_white_patch_map(layout: Layout, image_dims: tuple[int, int]) -> np.ndarray:
    """Rasterize a layout's element boxes into a binary H x W map.

    A pixel is 1 iff it lies inside at least one element box; boxes become
    half-open pixel rectangles by rounding corner coordinates half away
    from zero (see elements.box_pixel_rect). Order-invariant by construction.
    """
    height, width = image_dims
    out = np.zeros((height, width), dtype=np.float32)
    for element in layout:
        r0, r1, c0, c1 = box_pixel_rect(element.box, image_dims)
        out[r0:r1, c0:c1] = 1.0
    return out


def quantize_unit(values: np.ndarray) -> np.ndarray:
    """Snap [0, 1] floats to the 8-bit grid (what a PNG round trip preserves)."""
    return (np.round(values * 255.0) / np.float32(255.0)).astype(np.float32)


def simulate_inpainting(image: np.ndarray, white_patch: np.ndarray,
                        seed: int | np.random.Generator,
                        noise_amplitude: float = INPAINT_NOISE_AMPLITUDE,
                        min_change: float = INPAINT_MIN_CHANGE) -> np.ndarray:
    """Stamp a mild, statistically detectable artifact onto marked pixels.

    Pixels where white_patch == 0 are copied through untouched. Pixels where
    white_patch == 1 are replaced by a 5x5 local mean plus a smooth noise
    field of the given amplitude, then nudged if needed so every marked pixel
    differs from the input by at least min_change in some channel.
    """
    if image.shape[:2] != white_patch.shape:
        raise ValueError(
            f"image dims {image.shape[:2]} != white-patch dims {white_patch.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = image.astype(np.float32).copy()
    mask = white_patch > 0.5
    if not mask.any():
        return out

    smoothed = ndimage.uniform_filter(image.astype(np.float64), size=(5, 5, 1))
    noise = ndimage.gaussian_filter(rng.standard_normal(image.shape[:2]), sigma=2.0)
    peak = np.abs(noise).max()
    if peak > 0:
        noise = noise / peak * noise_amplitude
    artifact = np.clip(smoothed + noise[..., None], 0.0, 1.0).astype(np.float32)
    out[mask] = artifact[mask]

    # Guarantee a visible change on every marked pixel (clipping near 0/1 or a
    # noise zero-crossing can otherwise leave a pixel equal to its input).
    delta = np.abs(out - image.astype(np.float32)).max(axis=2)
    stuck = mask & (delta < min_change)
    if stuck.any():
        toward_gray = np.where(image <= 0.5, min_change, -min_change).astype(np.float32)
        out[stuck] = image[stuck] + toward_gray[stuck]
    return out


# ---------------------------------------------------------------------------
# scene rendering
# ---------------------------------------------------------------------------

def _render_background(rng: np.random.Generator, dims: tuple[int, int]) -> np.ndarray:
    """Textured backdrop: a two-color gradient, a few soft blobs, fine noise."""
    height, width = dims
    c0, c1 = rng.uniform(0.15, 0.9, size=(2, 3))
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width]
    t = (np.cos(theta) * xx / max(width - 1, 1)
         + np.sin(theta) * yy / max(height - 1, 1))
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    img = c0 + t[..., None] * (c1 - c0)

    for _ in range(int(rng.integers(2, 5))):
        by, bx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.1, 0.35, size=2)
        color = rng.uniform(0.1, 0.95, size=3)
        alpha = rng.uniform(0.15, 0.35)
        d2 = (((yy / height) - by) / ry) ** 2 + (((xx / width) - bx) / rx) ** 2
        fall = np.exp(-d2)[..., None] * alpha
        img = img * (1 - fall) + color * fall

    # Fine texture; inpainting's local smoothing visibly erases it.
    img = img + rng.uniform(-0.04, 0.04, size=(height, width, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _render_product(rng: np.random.Generator, dims: tuple[int, int],
                    img: np.ndarray) -> np.ndarray:
    """Draw a product shape onto img in place; returns its exact binary mask."""
    height, width = dims
    cy, cx = rng.uniform(0.38, 0.62, size=2)
    ry, rx = rng.uniform(0.12, 0.26, size=2)
    color = rng.uniform(0.05, 0.95, size=3)
    yy, xx = np.mgrid[0:height, 0:width]
    ny = (yy / height - cy) / ry
    nx = (xx / width - cx) / rx
    if rng.random() < 0.5:
        inside = ny ** 2 + nx ** 2 <= 1.0           # ellipse
    else:
        inside = (np.abs(ny) <= 1.0) & (np.abs(nx) <= 1.0)  # rectangle
    shade = 1.0 - 0.25 * np.clip(ny ** 2 + nx ** 2, 0, 1)
    tex = rng.uniform(-0.03, 0.03, size=(height, width, 3))
    product = np.clip(color * shade[..., None] + tex, 0.0, 1.0)
    img[inside] = product[inside]
    return inside.astype(np.float32)


def _band_coverage(mask: np.ndarray, y_lo: float, y_hi: float) -> float:
    height = mask.shape[0]
    r0, r1 = int(y_lo * height), max(int(y_hi * height), int(y_lo * height) + 1)
    return float(mask[r0:r1].mean())


def _sample_layout(rng: np.random.Generator, product_mask: np.ndarray,
                   image_id: str) -> Layout:
    """Rule-based plausible ad layout: texts in the product-free band, an
    underlay beneath one text, one logo, sometimes an embellishment."""
    elements: list[LayoutElement] = []

    top_cover = _band_coverage(product_mask, 0.0, 0.4)
    bottom_cover = _band_coverage(product_mask, 0.6, 1.0)
    texts_on_top = top_cover <= bottom_cover

    n_text = int(rng.integers(1, 4))
    text_w = rng.uniform(0.4, 0.7)
    text_h = rng.uniform(0.07, 0.11)
    gap = 0.02
    stack_h = n_text * text_h + (n_text - 1) * gap
    y0 = rng.uniform(0.04, 0.08) if texts_on_top else 1.0 - stack_h - rng.uniform(0.04, 0.08)
    cx = rng.uniform(0.42, 0.58)
    text_boxes = []
    for i in range(n_text):
        cy = y0 + i * (text_h + gap) + text_h / 2
        box = clamp_box(cx + rng.uniform(-0.03, 0.03), cy, text_w, text_h)
        text_boxes.append(box)
        elements.append(LayoutElement(Category.TEXT, box))

    # Underlay: backs one text element, slightly padded.
    tcx, tcy, tw, th = text_boxes[int(rng.integers(0, n_text))]
    elements.append(LayoutElement(
        Category.UNDERLAY, clamp_box(tcx, tcy, tw + 0.05, th + 0.03)))

    # Logo: opposite band from the texts, hugging a corner.
    logo_w = rng.uniform(0.14, 0.24)
    logo_h = rng.uniform(0.05, 0.09)
    logo_cy = 1.0 - 0.05 - logo_h / 2 if texts_on_top else 0.05 + logo_h / 2
    logo_cx = 0.05 + logo_w / 2 if rng.random() < 0.5 else 1.0 - 0.05 - logo_w / 2
    elements.append(LayoutElement(Category.LOGO, clamp_box(logo_cx, logo_cy, logo_w, logo_h)))

    if rng.random() < 0.4:
        emb_w, emb_h = rng.uniform(0.06, 0.12, size=2)
        emb_cx = rng.uniform(0.08, 0.2) if logo_cx > 0.5 else rng.uniform(0.8, 0.92)
        elements.append(LayoutElement(
            Category.EMBELLISHMENT, clamp_box(emb_cx, logo_cy, emb_w, emb_h)))

    return Layout(elements=elements, image_id=image_id)


def _saliency_from_mask(product_mask: np.ndarray) -> np.ndarray:
    height, width = product_mask.shape
    sal = ndimage.gaussian_filter(product_mask.astype(np.float64),
                                  sigma=min(height, width) / 16.0)
    peak = sal.max()
    if peak > 0:
        sal = sal / peak
    return quantize_unit(sal.astype(np.float32))


def _build_source_sample(seed: int, index: int, dims: tuple[int, int]
                         ) -> tuple[DomainSample, np.ndarray]:
    """Returns (sample, clean render before artifacts) for invariance checks."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _NS_SOURCE, index]))
    sample_id = f"src_{index:05d}"
    img = _render_background(rng, dims)
    product_mask = _render_product(rng, dims, img)
    clean = quantize_unit(img)
    layout = _sample_layout(rng, product_mask, sample_id)
    white_patch = compose_white_patch_map(layout, dims)
    image = quantize_unit(simulate_inpainting(clean, white_patch, rng))
    sample = DomainSample(
        image=image,
        saliency=_saliency_from_mask(product_mask),
        product_mask=product_mask,
        domain=DOMAIN_SOURCE,
        white_patch=white_patch,
        gt_layout=layout,
        sample_id=sample_id,
    )
    return sample, clean


def _build_target_sample(seed: int, index: int, dims: tuple[int, int]) -> DomainSample:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _NS_TARGET, index]))
    sample_id = f"tgt_{index:05d}"
    img = _render_background(rng, dims)
    product_mask = _render_product(rng, dims, img)
    return DomainSample(
        image=quantize_unit(img),
        saliency=_saliency_from_mask(product_mask),
        product_mask=product_mask,
        domain=DOMAIN_TARGET,
        white_patch=np.zeros(dims, dtype=np.float32),
        gt_layout=None,
        sample_id=sample_id,
    )


def generate_synthetic_corpus(n_source: int, n_target: int,
                              image_dims: tuple[int, int], seed: int) -> Corpus:
    """Build the two-domain corpus; deterministic given seed.

    Each sample is derived from its own RNG stream keyed by (seed, domain,
    index), so corpora of different sizes share their common prefix.
    """
    height, width = image_dims
    if height < 32 or width < 32:
        raise ConfigError(f"image dims must be >= 32, got {image_dims}")
    if n_source < 0 or n_target < 0:
        raise ConfigError("sample counts must be non-negative")

    samples: dict[str, DomainSample] = {}
    source_ids, target_ids = [], []
    for i in range(n_source):
        sample, _ = _build_source_sample(seed, i, (height, width))
        samples[sample.sample_id] = sample
        source_ids.append(sample.sample_id)
    for i in range(n_target):
        sample = _build_target_sample(seed, i, (height, width))
        samples[sample.sample_id] = sample
        target_ids.append(sample.sample_id)

    manifest = CorpusManifest(source_ids=source_ids, target_ids=target_ids,
                              image_dims=(height, width), seed=seed)
    return Corpus(manifest=manifest, samples=samples)


# ---------------------------------------------------------------------------
# epoch sampling
# ---------------------------------------------------------------------------

class EpochSampler:
    """Domain-balanced epoch sampler.

    The source subset is drawn once at run start and reused every epoch; the
    target subset is redrawn each epoch. epoch(i) is a pure function of
    (seed, i): the same run seed always yields the same id sequences.
    """

    def __init__(self, manifest: CorpusManifest, n_per_domain: int, seed: int,
                 with_replacement: bool = False):
        if not manifest.source_ids or not manifest.target_ids:
            raise ConfigError("epoch sampling needs at least one sample per domain")
        if n_per_domain < 1:
            raise ConfigError("n_per_domain must be >= 1")
        smallest = min(len(manifest.source_ids), len(manifest.target_ids))
        if n_per_domain > smallest and not with_replacement:
            raise ConfigError(
                f"n_per_domain={n_per_domain} exceeds domain size {smallest}; "
                "set with_replacement=True to allow")
        self.manifest = manifest
        self.n_per_domain = n_per_domain
        self.seed = seed
        self.with_replacement = with_replacement
        rng = np.random.default_rng(np.random.SeedSequence([seed, _NS_SOURCE_SUBSET]))
        self.source_subset = list(rng.choice(
            manifest.source_ids, size=n_per_domain, replace=with_replacement))

    def epoch(self, index: int) -> list[str]:
        """Ordered sample ids for one epoch, interleaved source/target."""
        draw_rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, _NS_TARGET_DRAW, index]))
        targets = list(draw_rng.choice(self.manifest.target_ids,
                                       size=self.n_per_domain,
                                       replace=self.with_replacement))
        order_rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, _NS_ORDER, index]))
        sources = list(self.source_subset)
        order_rng.shuffle(sources)
        interleaved = []
        for s, t in zip(sources, targets):
            interleaved.extend((s, t))
        return interleaved


def sample_epoch(manifest: CorpusManifest, n_per_domain: int, seed: int,
                 epoch: int = 0, with_replacement: bool = False) -> list[str]:
    sampler = EpochSampler(manifest, n_per_domain, seed,
                           with_replacement=with_replacement)
    return sampler.epoch(epoch)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _save_gray_png(path: Path, values: np.ndarray) -> None:
    Image.fromarray(np.round(values * 255.0).astype(np.uint8), mode="L").save(path)


def _load_gray_png(path: Path) -> np.ndarray:
    return (np.asarray(Image.open(path), dtype=np.float32) / np.float32(255.0))


def save_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Persist a corpus: manifest.json plus per-sample PNGs and layout JSON."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "manifest.json", "w") as f:
        json.dump(corpus.manifest.to_dict(), f, indent=2, sort_keys=True)
    for sample_id in (*corpus.manifest.source_ids, *corpus.manifest.target_ids):
        sample = corpus.samples[sample_id]
        d = root / "samples" / sample_id
        d.mkdir(parents=True, exist_ok=True)
        rgb = np.round(sample.image * 255.0).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(d / "image.png")
        _save_gray_png(d / "saliency.png", sample.saliency)
        _save_gray_png(d / "product_mask.png", sample.product_mask)
        _save_gray_png(d / "white_patch.png", sample.white_patch)
        if sample.gt_layout is not None:
            with open(d / "layout.json", "w") as f:
                json.dump(sample.gt_layout.to_dict(), f, indent=2, sort_keys=True)
    return root


def load_corpus(corpus_dir: str | Path) -> Corpus:
    root = Path(corpus_dir)
    with open(root / "manifest.json") as f:
        manifest = CorpusManifest.from_dict(json.load(f))
    samples: dict[str, DomainSample] = {}
    for domain, ids in ((DOMAIN_SOURCE, manifest.source_ids),
                        (DOMAIN_TARGET, manifest.target_ids)):
        for sample_id in ids:
            d = root / "samples" / sample_id
            image = (np.asarray(Image.open(d / "image.png"), dtype=np.float32)
                     / np.float32(255.0))
            layout = None
            layout_path = d / "layout.json"
            if layout_path.exists():
                with open(layout_path) as f:
                    layout = Layout.from_dict(json.load(f))
            samples[sample_id] = DomainSample(
                image=image,
                saliency=_load_gray_png(d / "saliency.png"),
                product_mask=_load_gray_png(d / "product_mask.png"),
                domain=domain,
                white_patch=_load_gray_png(d / "white_patch.png"),
                gt_layout=layout,
                sample_id=sample_id,
            )
    return Corpus(manifest=manifest, samples=samples)
